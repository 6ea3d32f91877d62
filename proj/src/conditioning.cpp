#include "avedit/conditioning.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>

namespace avedit {

// ---------------------------------------------------------------------------
// Vocabulary

namespace {
const std::vector<std::string>& reserved_tokens() {
  static const std::vector<std::string> r = {"<sot>", "<eot>", "<unk>"};
  return r;
}
}  // namespace

Vocabulary::Vocabulary() : Vocabulary(reserved_tokens()) {}

Vocabulary::Vocabulary(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
  const auto& r = reserved_tokens();
  if (tokens_.size() < r.size() || !std::equal(r.begin(), r.end(), tokens_.begin())) {
    throw FormatError("vocabulary must start with <sot>, <eot>, <unk>");
  }
  for (std::size_t i = 0; i < tokens_.size(); ++i) {
    if (tokens_[i].empty()) throw FormatError("vocabulary line " + std::to_string(i + 1) + " is empty");
    if (!index_.emplace(tokens_[i], static_cast<int>(i)).second) {
      throw FormatError("duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }
}

Vocabulary Vocabulary::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open vocabulary " + path);
  std::vector<std::string> tokens;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    tokens.push_back(line);
  }
  while (!tokens.empty() && tokens.back().empty()) tokens.pop_back();
  return Vocabulary(std::move(tokens));
}

void Vocabulary::save(const std::string& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write vocabulary " + path);
  for (const auto& t : tokens_) out << t << '\n';
}

int Vocabulary::id(std::string_view word) const {
  auto it = index_.find(std::string(word));
  return it == index_.end() ? kUnk : it->second;
}

const std::string& Vocabulary::token(int id) const {
  if (id < 0 || id >= size()) throw RangeError("token id " + std::to_string(id) + " outside vocabulary");
  return tokens_[static_cast<std::size_t>(id)];
}

const Vocabulary& default_vocabulary() {
  static const Vocabulary vocab = [] {
    std::vector<std::string> t = reserved_tokens();
    const char* words[] = {
        "a",         "an",       "the",       "is",        "are",      "of",        "in",       "on",
        "at",        "under",    "near",      "beside",    "with",     "and",       "by",       "into",
        "over",      "from",     "to",        "playing",   "plays",    "sounding",  "ringing",  "chirping",
        "beating",   "honking",  "raining",   "humming",   "barking",  "laughing",  "passing",  "crackling",
        "singing",   "roaring",  "dripping",  "church",    "bell",     "bells",     "drum",     "drums",
        "horn",      "horns",    "bird",      "birds",     "telephone","dog",       "child",    "train",
        "water",     "rain",     "forest",    "cathedral", "room",     "large",     "small",    "fireplace",
        "beach",     "wind",     "waves",     "crowd",     "person",   "woman",     "girl",     "accordion",
        "violin",    "guitar",   "piano",     "engine",    "car",      "street",    "city",     "night",
        "loud",      "soft",     "quiet",     "distant",   "gentle",   "heavy",     "grass",    "hall",
        "underwater","cave",     "storm",     "thunder",   "busy",     "market",    "echoing",  "tunnel",
    };
    for (const char* w : words) t.emplace_back(w);
    return Vocabulary(std::move(t));
  }();
  return vocab;
}

// ---------------------------------------------------------------------------
// Tokens

int TokenSequence::placeholder_position() const {
  for (std::size_t i = 0; i < markers.size(); ++i)
    if (markers[i] == TokenMarker::kPlaceholder) return static_cast<int>(i);
  return -1;
}

void TokenSequence::validate(int vocab_size) const {
  if (ids.size() != markers.size() || ids.size() != words.size()) throw ShapeError("token sequence fields disagree");
  if (ids.empty() || markers.front() != TokenMarker::kSot) throw FormatError("token sequence must start with <sot>");
  const auto eots = std::count(markers.begin(), markers.end(), TokenMarker::kEot);
  if (eots != 1) throw FormatError("token sequence must contain exactly one <eot>");
  if (std::count(markers.begin(), markers.end(), TokenMarker::kPlaceholder) > 1) {
    throw FormatError("token sequence holds more than one placeholder");
  }
  for (int id : ids)
    if (id < 0 || id >= vocab_size) throw RangeError("token id outside vocabulary");
}

std::vector<std::string> split_words(std::string_view text) {
  std::vector<std::string> words;
  std::string cur;
  for (char ch : text) {
    const auto c = static_cast<unsigned char>(ch);
    if (std::isalnum(c) || ch == '\'') {
      cur.push_back(static_cast<char>(std::tolower(c)));
    } else if (!cur.empty()) {
      words.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) words.push_back(std::move(cur));
  return words;
}

TokenSequence tokenize(std::string_view prompt, const Vocabulary& vocab) {
  const auto words = split_words(prompt);
  if (words.empty()) throw DataError("cannot tokenize an empty prompt");
  TokenSequence seq;
  seq.text = std::string(prompt);
  seq.ids.push_back(Vocabulary::kSot);
  seq.markers.push_back(TokenMarker::kSot);
  seq.words.emplace_back("<sot>");
  for (const auto& w : words) {
    seq.ids.push_back(vocab.id(w));
    seq.markers.push_back(TokenMarker::kWord);
    seq.words.push_back(w);
  }
  seq.ids.push_back(Vocabulary::kEot);
  seq.markers.push_back(TokenMarker::kEot);
  seq.words.emplace_back("<eot>");
  return seq;
}

TokenSequence insert_placeholder(const TokenSequence& tokens, int position) {
  if (position < 0 || position >= tokens.size()) {
    throw RangeError("placeholder position " + std::to_string(position) + " outside the sequence");
  }
  if (tokens.markers[static_cast<std::size_t>(position)] != TokenMarker::kWord) {
    throw RangeError("placeholder must precede a word token");
  }
  if (tokens.placeholder_position() >= 0) throw FormatError("sequence already holds a placeholder");
  TokenSequence out = tokens;
  const auto at = static_cast<std::ptrdiff_t>(position);
  out.ids.insert(out.ids.begin() + at, Vocabulary::kUnk);
  out.markers.insert(out.markers.begin() + at, TokenMarker::kPlaceholder);
  out.words.insert(out.words.begin() + at, "<c>");
  return out;
}

std::string detokenize(const TokenSequence& tokens) {
  std::string out;
  for (std::size_t i = 0; i < tokens.markers.size(); ++i) {
    if (tokens.markers[i] != TokenMarker::kWord) continue;
    if (!out.empty()) out.push_back(' ');
    out += tokens.words[i];
  }
  return out;
}

int find_subject(const TokenSequence& tokens, const std::vector<std::string>& subject) {
  if (subject.empty()) return -1;
  const int n = tokens.size();
  const int m = static_cast<int>(subject.size());
  for (int i = 0; i + m <= n; ++i) {
    bool match = true;
    for (int j = 0; j < m && match; ++j) {
      const auto k = static_cast<std::size_t>(i + j);
      match = tokens.markers[k] == TokenMarker::kWord && tokens.words[k] == subject[static_cast<std::size_t>(j)];
    }
    if (match) return i;
  }
  return -1;
}

const char* to_string(AdaptationMode m) {
  switch (m) {
    case AdaptationMode::kTextOnly: return "text";
    case AdaptationMode::kUnimodal: return "unimodal";
    case AdaptationMode::kMultimodal: return "multimodal";
  }
  return "?";
}

const char* to_string(FusionPoint f) { return f == FusionPoint::kEarly ? "early" : "late"; }

AdaptationMode parse_mode(std::string_view s) {
  if (s == "text" || s == "text_only") return AdaptationMode::kTextOnly;
  if (s == "unimodal") return AdaptationMode::kUnimodal;
  if (s == "multimodal") return AdaptationMode::kMultimodal;
  throw RangeError("unknown adaptation mode '" + std::string(s) + "'");
}

FusionPoint parse_fusion(std::string_view s) {
  if (s == "early") return FusionPoint::kEarly;
  if (s == "late") return FusionPoint::kLate;
  throw RangeError("unknown fusion point '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------
// FusionAdapter

template <typename S>
FusionAdapter<S>::FusionAdapter(FusionConfig config, std::uint64_t seed) : config_(config) {
  if (config_.feature_dim < 1 || config_.hidden_width < 1 || config_.text_width < 1) {
    throw ShapeError("fusion adapter: widths must be positive");
  }
  Rng rng_a(seed, "mlp.audio");
  Rng rng_v(seed, "mlp.vision");
  const int in = 2 * config_.feature_dim;
  mlp_audio_ = Mlp<S>(in, config_.hidden_width, config_.text_width, rng_a);
  mlp_vision_ = Mlp<S>(in, config_.hidden_width, config_.text_width, rng_v);
  free_audio_ = ad::Parameter<S>(Matrix<S>::Zero(1, config_.text_width));
  free_vision_ = ad::Parameter<S>(Matrix<S>::Zero(1, config_.text_width));
}

template <typename S>
std::pair<ad::Var<S>, ad::Var<S>> FusionAdapter<S>::fuse(ad::Tape<S>& tape, ad::Var<S> f_audio, ad::Var<S> f_vision,
                                                        bool trainable) {
  const Eigen::Index d = config_.feature_dim;
  if (f_audio.rows() != 1 || f_vision.rows() != 1 || f_audio.cols() != d || f_vision.cols() != d) {
    throw ShapeError("fuse_features: features must be 1 x " + std::to_string(d));
  }
  switch (config_.mode) {
    case AdaptationMode::kTextOnly:
      return {nn::bind(tape, free_audio_, trainable), nn::bind(tape, free_vision_, trainable)};
    case AdaptationMode::kUnimodal: {
      ad::Var<S> zeros = tape.constant(Matrix<S>::Zero(1, d));
      ad::Var<S> audio_in = ad::concat_cols(f_audio, zeros);
      ad::Var<S> vision_in = ad::concat_cols(zeros, f_vision);
      return {mlp_audio_(tape, audio_in, trainable), mlp_vision_(tape, vision_in, trainable)};
    }
    case AdaptationMode::kMultimodal: {
      ad::Var<S> joint = ad::concat_cols(f_audio, f_vision);
      return {mlp_audio_(tape, joint, trainable), mlp_vision_(tape, joint, trainable)};
    }
  }
  throw Error("unreachable adaptation mode");
}

template <typename S>
std::pair<RowVector<S>, RowVector<S>> FusionAdapter<S>::fuse(const RowVector<S>& f_audio,
                                                             const RowVector<S>& f_vision) {
  ad::Tape<S> tape(false);
  auto [e1, e2] = fuse(tape, tape.constant(f_audio), tape.constant(f_vision), false);
  return {e1.value().row(0), e2.value().row(0)};
}

template <typename S>
ad::ParameterList<S> FusionAdapter<S>::parameters() {
  ad::ParameterList<S> ps;
  if (config_.mode == AdaptationMode::kTextOnly) {
    ps.emplace_back("free.audio", &free_audio_);
    ps.emplace_back("free.vision", &free_vision_);
  } else {
    mlp_audio_.collect("mlp.audio", ps);
    mlp_vision_.collect("mlp.vision", ps);
  }
  return ps;
}

// ---------------------------------------------------------------------------
// TextEncoder

template <typename S>
TextEncoder<S>::TextEncoder(TextEncoderConfig config, std::uint64_t seed) : config_(config) {
  if (config_.vocab_size < 3 || config_.width < 2 || config_.blocks < 0) {
    throw ShapeError("text encoder: invalid configuration");
  }
  Rng rng(seed);
  const int d = config_.width;
  table_ = ad::Parameter<S>(rng.normal_matrix<S>(config_.vocab_size, d));
  const double proj = 1.0 / std::sqrt(static_cast<double>(d));
  for (int b = 0; b < config_.blocks; ++b) {
    Block blk;
    blk.norm1 = nn::LayerNorm<S>(d);
    blk.query = ad::Parameter<S>(rng.normal_matrix<S>(d, d, proj));
    blk.key = ad::Parameter<S>(rng.normal_matrix<S>(d, d, proj));
    blk.value = ad::Parameter<S>(rng.normal_matrix<S>(d, d, proj));
    blk.output = ad::Parameter<S>(rng.normal_matrix<S>(d, d, proj));
    blk.norm2 = nn::LayerNorm<S>(d);
    blk.ff1 = nn::Linear<S>(d, config_.ff_width, rng);
    blk.ff2 = nn::Linear<S>(config_.ff_width, d, rng);
    blocks_.push_back(std::move(blk));
  }
  final_norm_ = nn::LayerNorm<S>(d);
}

template <typename S>
RowVector<S> TextEncoder<S>::token_embedding(int id) const {
  if (id < 0 || id >= config_.vocab_size) throw RangeError("token id outside the encoder table");
  return table_.value.row(id);
}

template <typename S>
ad::Var<S> TextEncoder<S>::encode(ad::Tape<S>& tape, const TokenSequence& tokens, std::optional<ad::Var<S>> injected,
                                  FusionPoint fusion, bool trainable) {
  tokens.validate(config_.vocab_size);
  const int n = tokens.size();
  const int d = config_.width;
  const int slot = tokens.placeholder_position();
  if (slot >= 0 && !injected) throw DataError("prompt holds a placeholder but no fused embedding was supplied");
  if (slot >= 0 && (injected->rows() != 1 || injected->cols() != d)) {
    throw ShapeError("injected embedding must be 1 x " + std::to_string(d));
  }

  Matrix<S> base(n, d);
  for (int i = 0; i < n; ++i) base.row(i) = table_.value.row(tokens.ids[static_cast<std::size_t>(i)]);
  if (slot >= 0) base.row(slot).setZero();
  ad::Var<S> x = tape.constant(std::move(base));
  if (slot >= 0 && fusion == FusionPoint::kEarly) x = ad::replace_row(x, slot, *injected);

  Matrix<S> positions(n, d);
  for (int i = 0; i < n; ++i) positions.row(i) = nn::sinusoidal_embedding<S>(i, d);
  x = ad::add(x, tape.constant(std::move(positions)));

  const S inv_sqrt_d = S(1) / std::sqrt(static_cast<S>(d));
  for (Block& blk : blocks_) {
    if (config_.attention) {
      ad::Var<S> h = blk.norm1(tape, x, trainable);
      ad::Var<S> q = ad::matmul(h, nn::bind(tape, blk.query, trainable));
      ad::Var<S> k = ad::matmul(h, nn::bind(tape, blk.key, trainable));
      ad::Var<S> v = ad::matmul(h, nn::bind(tape, blk.value, trainable));
      ad::Var<S> attn = ad::softmax_rows(ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_d));
      x = ad::add(x, ad::matmul(ad::matmul(attn, v), nn::bind(tape, blk.output, trainable)));
    }
    ad::Var<S> h = blk.norm2(tape, x, trainable);
    x = ad::add(x, blk.ff2(tape, ad::silu(blk.ff1(tape, h, trainable)), trainable));
  }
  x = final_norm_(tape, x, trainable);
  if (slot >= 0 && fusion == FusionPoint::kLate) x = ad::add_to_row(x, slot, *injected);
  return x;
}

template <typename S>
Matrix<S> TextEncoder<S>::encode(const TokenSequence& tokens, const std::optional<RowVector<S>>& injected,
                                 FusionPoint fusion) {
  ad::Tape<S> tape(false);
  std::optional<ad::Var<S>> inj;
  if (injected) inj = tape.constant(*injected);
  return encode(tape, tokens, inj, fusion, false).value();
}

template <typename S>
ad::ParameterList<S> TextEncoder<S>::parameters() {
  ad::ParameterList<S> ps;
  ps.emplace_back("table", &table_);
  for (std::size_t b = 0; b < blocks_.size(); ++b) {
    const std::string p = "block." + std::to_string(b);
    Block& blk = blocks_[b];
    blk.norm1.collect(p + ".norm1", ps);
    ps.emplace_back(p + ".query", &blk.query);
    ps.emplace_back(p + ".key", &blk.key);
    ps.emplace_back(p + ".value", &blk.value);
    ps.emplace_back(p + ".output", &blk.output);
    blk.norm2.collect(p + ".norm2", ps);
    blk.ff1.collect(p + ".ff1", ps);
    blk.ff2.collect(p + ".ff2", ps);
  }
  final_norm_.collect("final_norm", ps);
  return ps;
}

template class FusionAdapter<float>;
template class FusionAdapter<double>;
template class TextEncoder<float>;
template class TextEncoder<double>;

}  // namespace avedit
