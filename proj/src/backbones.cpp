#include "avedit/backbones.hpp"

#include "avedit/diffusion.hpp"

namespace avedit {

void UNetConfig::validate() const {
  if (channels < 1 || height < 1 || width < 1) throw ShapeError("unet: latent dimensions must be positive");
  if (channel_mult.empty()) throw ShapeError("unet: need at least one resolution level");
  if (!(data_sd > 0.0)) throw RangeError("unet: data_sd must be positive");
  const int factor = 1 << (depth() - 1);
  if (height % factor != 0 || width % factor != 0) {
    throw ShapeError("unet: latent " + std::to_string(height) + "x" + std::to_string(width) +
                     " not divisible by 2^(depth-1)");
  }
  for (std::size_t l = 0; l < channel_mult.size(); ++l) {
    const int w = base_width * channel_mult[l];
    if (w % groups != 0) throw ShapeError("unet: level width not divisible by group count");
    if (l + 1 < channel_mult.size() && (w + base_width * channel_mult[l + 1]) % groups != 0) {
      throw ShapeError("unet: skip concatenation width not divisible by group count");
    }
  }
  if (steps < 1 || time_width < 2 || condition_width < 1 || attention_width < 1) {
    throw ShapeError("unet: invalid embedding widths");
  }
}

template <typename S>
UNet<S>::UNet(UNetConfig config, std::uint64_t seed) : config_(std::move(config)) {
  config_.validate();
  Rng rng(seed);
  const int tw = config_.time_width;
  time1_ = nn::Linear<S>(tw, tw, rng);
  time2_ = nn::Linear<S>(tw, tw, rng);
  const int w0 = config_.base_width * config_.channel_mult[0];
  conv_in_ = nn::Conv2d<S>(config_.channels, w0, 3, 1, rng);
  int prev = w0;
  const int depth = config_.depth();
  for (int l = 0; l < depth; ++l) {
    const int wl = config_.base_width * config_.channel_mult[static_cast<std::size_t>(l)];
    down_res_.push_back(make_res(prev, wl, rng));
    AttnBlock ab;
    ab.norm = nn::GroupNorm<S>(wl, config_.groups);
    ab.attn = CrossAttentionWeights<S>(wl, config_.condition_width, config_.attention_width, rng);
    down_attn_.push_back(std::move(ab));
    if (l + 1 < depth) downsample_.push_back(nn::Conv2d<S>(wl, wl, 3, 2, rng));
    prev = wl;
  }
  up_res_.resize(static_cast<std::size_t>(std::max(depth - 1, 0)));
  for (int l = depth - 2; l >= 0; --l) {
    const int wl = config_.base_width * config_.channel_mult[static_cast<std::size_t>(l)];
    const int wn = config_.base_width * config_.channel_mult[static_cast<std::size_t>(l + 1)];
    up_res_[static_cast<std::size_t>(l)] = make_res(wn + wl, wl, rng);
  }
  out_norm_ = nn::GroupNorm<S>(w0, config_.groups);
  conv_out_ = nn::Conv2d<S>(w0, config_.channels, 3, 1, rng, /*zero_init=*/true);
}

template <typename S>
typename UNet<S>::ResBlock UNet<S>::make_res(int in, int out, Rng& rng) {
  ResBlock b;
  b.norm1 = nn::GroupNorm<S>(in, config_.groups);
  b.conv1 = nn::Conv2d<S>(in, out, 3, 1, rng);
  b.time_proj = nn::Linear<S>(config_.time_width, out, rng);
  b.norm2 = nn::GroupNorm<S>(out, config_.groups);
  b.conv2 = nn::Conv2d<S>(out, out, 3, 1, rng);
  b.has_skip = in != out;
  if (b.has_skip) b.skip = nn::Conv2d<S>(in, out, 1, 1, rng);
  return b;
}

template <typename S>
ad::Var<S> UNet<S>::run_res(ad::Tape<S>& tape, ResBlock& b, ad::Var<S> x, ad::Var<S> temb, int h, int w,
                            bool trainable) {
  int hh = h, ww = w;
  ad::Var<S> y = b.conv1(tape, ad::silu(b.norm1(tape, x, trainable)), hh, ww, trainable);
  ad::Var<S> tproj = ad::transpose(b.time_proj(tape, ad::silu(temb), trainable));
  y = ad::add_col_vector(y, tproj);
  hh = h;
  ww = w;
  y = b.conv2(tape, ad::silu(b.norm2(tape, y, trainable)), hh, ww, trainable);
  ad::Var<S> skip = x;
  if (b.has_skip) {
    hh = h;
    ww = w;
    skip = b.skip(tape, x, hh, ww, trainable);
  }
  return ad::add(skip, y);
}

template <typename S>
ad::Var<S> UNet<S>::run_attn(ad::Tape<S>& tape, AttnBlock& b, ad::Var<S> x, ad::Var<S> cond, int layer, int t,
                             const AttentionHook<S>* hook, std::vector<AttentionMap<S>>* maps, bool trainable) {
  ad::Var<S> patches = ad::transpose(b.norm(tape, x, trainable));
  CrossAttentionResult<S> r = cross_attention(tape, patches, cond, b.attn, hook, layer, t, trainable);
  if (maps != nullptr) maps->push_back(std::move(r.map));
  return ad::add(x, ad::transpose(r.output));
}

template <typename S>
ad::Var<S> UNet<S>::forward(ad::Tape<S>& tape, ad::Var<S> latent, int t, ad::Var<S> condition,
                            const AttentionHook<S>* hook, std::vector<AttentionMap<S>>* maps, bool trainable) {
  if (latent.rows() != config_.channels ||
      latent.cols() != static_cast<Eigen::Index>(config_.height) * config_.width) {
    throw ShapeError("unet: latent is " + std::to_string(latent.rows()) + "x" + std::to_string(latent.cols()) +
                     ", expected " + std::to_string(config_.channels) + "x" +
                     std::to_string(config_.height * config_.width));
  }
  if (condition.cols() != config_.condition_width) throw ShapeError("unet: condition width mismatch");
  if (t < 1 || t > config_.steps) throw RangeError("unet: timestep " + std::to_string(t) + " out of range");

  ad::Var<S> temb = tape.constant(nn::sinusoidal_embedding<S>(t, config_.time_width));
  temb = time2_(tape, ad::silu(time1_(tape, temb, trainable)), trainable);

  int h = config_.height, w = config_.width;
  ad::Var<S> x = conv_in_(tape, latent, h, w, trainable);
  struct Skip {
    ad::Var<S> v;
    int h, w;
  };
  std::vector<Skip> skips;
  const int depth = config_.depth();
  for (int l = 0; l < depth; ++l) {
    const auto li = static_cast<std::size_t>(l);
    x = run_res(tape, down_res_[li], x, temb, h, w, trainable);
    x = run_attn(tape, down_attn_[li], x, condition, l, t, hook, maps, trainable);
    if (l + 1 < depth) {
      skips.push_back({x, h, w});
      x = downsample_[li](tape, x, h, w, trainable);
    }
  }
  for (int l = depth - 2; l >= 0; --l) {
    const Skip& s = skips[static_cast<std::size_t>(l)];
    x = ad::upsample2x(x, h, w);
    h = s.h;
    w = s.w;
    x = ad::concat_rows(x, s.v);
    x = run_res(tape, up_res_[static_cast<std::size_t>(l)], x, temb, h, w, trainable);
  }
  x = ad::silu(out_norm_(tape, x, trainable));
  ad::Var<S> out = conv_out_(tape, x, h, w, trainable);
  if (!config_.noise_skip) return out;
  const double ab = linear_beta_schedule(config_.steps, 1e-4, 0.02).alpha_bar(t);
  const double signal = ab * config_.data_sd * config_.data_sd;
  const double c_skip = std::sqrt(1.0 - ab) / (signal + 1.0 - ab);
  const double c_out = std::sqrt(signal / (signal + 1.0 - ab));
  return ad::add(ad::scale(out, static_cast<S>(c_out)), ad::scale(latent, static_cast<S>(c_skip)));
}

template <typename S>
Matrix<S> UNet<S>::predict(const Matrix<S>& latent, int t, const Matrix<S>& condition, const AttentionHook<S>* hook,
                           std::vector<AttentionMap<S>>* maps) {
  ad::Tape<S> tape(false);
  ad::Var<S> out = forward(tape, tape.constant(latent), t, tape.constant(condition), hook, maps, false);
  return out.value();
}

template <typename S>
ad::ParameterList<S> UNet<S>::parameters() {
  ad::ParameterList<S> ps;
  time1_.collect("time.0", ps);
  time2_.collect("time.1", ps);
  conv_in_.collect("conv_in", ps);
  auto collect_res = [&ps](ResBlock& b, const std::string& p) {
    b.norm1.collect(p + ".norm1", ps);
    b.conv1.collect(p + ".conv1", ps);
    b.time_proj.collect(p + ".time_proj", ps);
    b.norm2.collect(p + ".norm2", ps);
    b.conv2.collect(p + ".conv2", ps);
    if (b.has_skip) b.skip.collect(p + ".skip", ps);
  };
  for (std::size_t l = 0; l < down_res_.size(); ++l) {
    const std::string p = "down." + std::to_string(l);
    collect_res(down_res_[l], p + ".res");
    down_attn_[l].norm.collect(p + ".attn.norm", ps);
    down_attn_[l].attn.collect(p + ".attn", ps);
    if (l < downsample_.size()) downsample_[l].collect(p + ".downsample", ps);
  }
  for (std::size_t l = 0; l < up_res_.size(); ++l) collect_res(up_res_[l], "up." + std::to_string(l) + ".res");
  out_norm_.collect("out.norm", ps);
  conv_out_.collect("out.conv", ps);
  return ps;
}

template <typename S>
std::size_t UNet<S>::parameter_count() {
  std::size_t n = 0;
  for (auto& [name, p] : parameters()) n += static_cast<std::size_t>(p->value.size());
  return n;
}

template class UNet<float>;
template class UNet<double>;

}  // namespace avedit
