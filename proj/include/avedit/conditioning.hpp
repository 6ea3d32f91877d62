#pragma once

#include "avedit/layers.hpp"

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <utility>
#include <vector>

namespace avedit {

// ---------------------------------------------------------------------------
// Tokens

enum class TokenMarker { kSot, kEot, kWord, kPlaceholder };

/// Word-level vocabulary. Ids 0/1/2 are reserved for <sot>, <eot>, <unk>.
class Vocabulary {
 public:
  static constexpr int kSot = 0;
  static constexpr int kEot = 1;
  static constexpr int kUnk = 2;

  Vocabulary();  // reserved tokens only
  explicit Vocabulary(std::vector<std::string> tokens);

  /// Plain text, one token per line, line number = id.
  static Vocabulary load(const std::string& path);
  void save(const std::string& path) const;

  int id(std::string_view word) const;  // kUnk when absent
  const std::string& token(int id) const;
  int size() const { return static_cast<int>(tokens_.size()); }
  bool contains(std::string_view word) const { return index_.count(std::string(word)) > 0; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> index_;
};

/// The vocabulary covering the built-in prompt templates.
const Vocabulary& default_vocabulary();

struct TokenSequence {
  std::vector<int> ids;
  std::vector<TokenMarker> markers;
  std::vector<std::string> words;  // surface form per position ("<sot>", "<c>", ...)
  std::string text;

  int size() const { return static_cast<int>(ids.size()); }
  int placeholder_position() const;  // -1 when absent
  void validate(int vocab_size) const;
};

/// Lowercased words split on whitespace and punctuation (apostrophes kept).
std::vector<std::string> split_words(std::string_view text);

TokenSequence tokenize(std::string_view prompt, const Vocabulary& vocab);

/// Inserts <c> immediately before the word token at `position`.
TokenSequence insert_placeholder(const TokenSequence& tokens, int position);

/// Word tokens joined by single spaces; markers and the placeholder dropped.
std::string detokenize(const TokenSequence& tokens);

/// Token position of the first occurrence of `subject` (a word subsequence) in
/// `tokens`, or -1.
int find_subject(const TokenSequence& tokens, const std::vector<std::string>& subject);

// ---------------------------------------------------------------------------
// Fusion

enum class AdaptationMode { kTextOnly, kUnimodal, kMultimodal };
enum class FusionPoint { kEarly, kLate };
enum class Branch { kAudio, kVision };

const char* to_string(AdaptationMode m);
const char* to_string(FusionPoint f);
AdaptationMode parse_mode(std::string_view s);
FusionPoint parse_fusion(std::string_view s);

struct FusionConfig {
  int feature_dim = 64;
  int hidden_width = 1024;
  int text_width = 64;
  AdaptationMode mode = AdaptationMode::kMultimodal;
};

/// Two-layer perceptron: linear -> ReLU -> linear, final layer zero-initialized.
template <typename S>
struct Mlp {
  nn::Linear<S> first;
  nn::Linear<S> second;

  Mlp() = default;
  Mlp(int in, int hidden, int out, Rng& rng) : first(in, hidden, rng), second(hidden, out, rng, true) {}

  ad::Var<S> operator()(ad::Tape<S>& tape, ad::Var<S> x, bool trainable) {
    return second(tape, ad::relu(first(tape, x, trainable)), trainable);
  }
  void collect(const std::string& prefix, ad::ParameterList<S>& out) {
    first.collect(prefix + ".0", out);
    second.collect(prefix + ".1", out);
  }
};

/// Maps the audio and image features to the two text-embedding-space vectors
/// (e1 for the audio text encoder, e2 for the vision text encoder).
template <typename S>
class FusionAdapter {
 public:
  FusionAdapter() = default;
  FusionAdapter(FusionConfig config, std::uint64_t seed);

  const FusionConfig& config() const { return config_; }

  /// f_audio, f_vision are 1 x feature_dim.
  std::pair<ad::Var<S>, ad::Var<S>> fuse(ad::Tape<S>& tape, ad::Var<S> f_audio, ad::Var<S> f_vision,
                                         bool trainable = true);
  std::pair<RowVector<S>, RowVector<S>> fuse(const RowVector<S>& f_audio, const RowVector<S>& f_vision);

  /// Trainable parameters for the configured mode.
  ad::ParameterList<S> parameters();

  Mlp<S>& audio_mlp() { return mlp_audio_; }
  Mlp<S>& vision_mlp() { return mlp_vision_; }

 private:
  FusionConfig config_;
  Mlp<S> mlp_audio_;
  Mlp<S> mlp_vision_;
  ad::Parameter<S> free_audio_;
  ad::Parameter<S> free_vision_;
};

// ---------------------------------------------------------------------------
// Text encoders

struct TextEncoderConfig {
  int vocab_size = 3;
  int width = 64;
  int blocks = 2;
  int ff_width = 128;
  bool attention = true;  // false gives a position-wise diagnostic encoder
};

/// Token table + sinusoidal positions + pre-norm self-attention blocks.
/// Frozen during adaptation; gradients still flow to an injected embedding.
template <typename S>
class TextEncoder {
 public:
  TextEncoder() = default;
  TextEncoder(TextEncoderConfig config, std::uint64_t seed);

  const TextEncoderConfig& config() const { return config_; }
  void set_attention(bool enabled) { config_.attention = enabled; }

  RowVector<S> token_embedding(int id) const;

  /// Per-token condition (N x width). If the sequence carries a placeholder
  /// `injected` must be given: early fusion substitutes it for the
  /// placeholder's input embedding, late fusion adds it to that slot's output
  /// after encoding a zero input embedding there.
  ad::Var<S> encode(ad::Tape<S>& tape, const TokenSequence& tokens, std::optional<ad::Var<S>> injected,
                    FusionPoint fusion, bool trainable = false);

  Matrix<S> encode(const TokenSequence& tokens, const std::optional<RowVector<S>>& injected, FusionPoint fusion);

  ad::ParameterList<S> parameters();

 private:
  struct Block {
    nn::LayerNorm<S> norm1;
    ad::Parameter<S> query, key, value, output;
    nn::LayerNorm<S> norm2;
    nn::Linear<S> ff1, ff2;
  };

  TextEncoderConfig config_;
  ad::Parameter<S> table_;  // vocab x width
  std::vector<Block> blocks_;
  nn::LayerNorm<S> final_norm_;
};

/// Condition for one branch: encodes `tokens` with `encoder`, injecting the
/// branch's fused vector at the placeholder.
template <typename S>
ad::Var<S> encode_text(ad::Tape<S>& tape, TextEncoder<S>& encoder, const TokenSequence& tokens,
                       std::optional<ad::Var<S>> injected, FusionPoint fusion) {
  return encoder.encode(tape, tokens, injected, fusion, false);
}

extern template class FusionAdapter<float>;
extern template class FusionAdapter<double>;
extern template class TextEncoder<float>;
extern template class TextEncoder<double>;

}  // namespace avedit
