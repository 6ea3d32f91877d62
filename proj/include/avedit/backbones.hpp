#pragma once

#include "avedit/layers.hpp"

#include <cstdint>
#include <functional>
#include <vector>

namespace avedit {

struct UNetConfig {
  int channels = 4;
  int height = 8;
  int width = 8;
  int base_width = 32;
  std::vector<int> channel_mult = {1, 2};  // one entry per resolution level
  int groups = 8;
  int time_width = 32;
  int condition_width = 64;
  int attention_width = 32;
  int steps = 1000;
  // Output is c_skip(t) x_t + c_out(t) net(x_t), the minimum-variance linear
  // noise estimate for latents of std data_sd plus a scaled residual, on the
  // default linear schedule. Disabled, the net predicts the noise directly.
  bool noise_skip = false;
  double data_sd = 1.0;

  int depth() const { return static_cast<int>(channel_mult.size()); }
  void validate() const;
};

/// Cross-attention weights between image patches (rows) and condition tokens
/// (columns). Immediately after the softmax every row sums to one; a hook
/// may rescale entries, after which row_stochastic is false.
template <typename S>
struct AttentionMap {
  Matrix<S> weights;
  int layer = 0;
  int step = 0;
  bool row_stochastic = true;
};

/// Transforms a post-softmax map in place before value aggregation. Hooks
/// are expected to act as elementwise gains; gradients flow through the gain
/// actually applied.
template <typename S>
using AttentionHook = std::function<void(AttentionMap<S>&)>;

template <typename S>
struct CrossAttentionWeights {
  ad::Parameter<S> query;   // d_model x d_k
  ad::Parameter<S> key;     // d_text x d_k
  ad::Parameter<S> value;   // d_text x d_k
  ad::Parameter<S> output;  // d_k x d_model
  ad::Parameter<S> output_bias;  // 1 x d_model

  CrossAttentionWeights() = default;
  CrossAttentionWeights(int d_model, int d_text, int d_k, Rng& rng) {
    query = ad::Parameter<S>(rng.normal_matrix<S>(d_model, d_k, 1.0 / std::sqrt(double(d_model))));
    key = ad::Parameter<S>(rng.normal_matrix<S>(d_text, d_k, 1.0 / std::sqrt(double(d_text))));
    value = ad::Parameter<S>(rng.normal_matrix<S>(d_text, d_k, 1.0 / std::sqrt(double(d_text))));
    output = ad::Parameter<S>(rng.normal_matrix<S>(d_k, d_model, 1.0 / std::sqrt(double(d_k))));
    output_bias = ad::Parameter<S>(Matrix<S>::Zero(1, d_model));
  }

  void collect(const std::string& prefix, ad::ParameterList<S>& out) {
    out.emplace_back(prefix + ".query", &query);
    out.emplace_back(prefix + ".key", &key);
    out.emplace_back(prefix + ".value", &value);
    out.emplace_back(prefix + ".output", &output);
    out.emplace_back(prefix + ".output_bias", &output_bias);
  }
};

template <typename S>
struct CrossAttentionResult {
  ad::Var<S> output;  // P x d_model
  AttentionMap<S> map;
};

/// softmax(Q K^T / sqrt(d_k)) V W_o for patches (P x d_model) attending to a
/// condition (N x d_text). The hook, if any, sees the map before aggregation;
/// the returned map is the post-hook one.
template <typename S>
CrossAttentionResult<S> cross_attention(ad::Tape<S>& tape, ad::Var<S> patches, ad::Var<S> condition,
                                        CrossAttentionWeights<S>& w, const AttentionHook<S>* hook, int layer,
                                        int step, bool trainable) {
  if (condition.rows() < 1) throw ShapeError("cross_attention: empty condition");
  if (condition.cols() != w.key.value.rows()) {
    throw ShapeError("cross_attention: condition width " + std::to_string(condition.cols()) +
                     " does not match key projection " + std::to_string(w.key.value.rows()));
  }
  if (patches.cols() != w.query.value.rows()) throw ShapeError("cross_attention: patch width mismatch");
  using nn::bind;
  const S inv_sqrt_dk = S(1) / std::sqrt(static_cast<S>(w.query.value.cols()));
  ad::Var<S> q = ad::matmul(patches, bind(tape, w.query, trainable));
  ad::Var<S> k = ad::matmul(condition, bind(tape, w.key, trainable));
  ad::Var<S> v = ad::matmul(condition, bind(tape, w.value, trainable));
  ad::Var<S> scores = ad::scale(ad::matmul(q, ad::transpose(k)), inv_sqrt_dk);
  ad::Var<S> probs = ad::softmax_rows(scores);

  AttentionMap<S> map{probs.value(), layer, step, true};
  if (hook != nullptr && *hook) {
    (*hook)(map);
    const Matrix<S>& pre = probs.value();
    Matrix<S> gain = (pre.array() != S(0)).select(map.weights.array() / pre.array(), S(0)).matrix();
    probs = ad::apply_gain(probs, std::move(gain), map.weights);
  }
  ad::Var<S> mixed = ad::matmul(probs, v);
  ad::Var<S> out = ad::add_row_vector(ad::matmul(mixed, bind(tape, w.output, trainable)),
                                      bind(tape, w.output_bias, trainable));
  return {out, std::move(map)};
}

/// Small conditional U-Net predicting the injected noise. One residual block
/// and one cross-attention layer per resolution on the way down, one residual
/// block per level on the way up, zero-initialized output convolution.
template <typename S>
class UNet {
 public:
  UNet() = default;
  UNet(UNetConfig config, std::uint64_t seed);

  const UNetConfig& config() const { return config_; }

  /// Full forward on a tape. `latent` is (channels x h*w); `condition` is
  /// (N x condition_width). Maps from every attention layer are appended to
  /// `maps` when given.
  ad::Var<S> forward(ad::Tape<S>& tape, ad::Var<S> latent, int t, ad::Var<S> condition,
                     const AttentionHook<S>* hook = nullptr, std::vector<AttentionMap<S>>* maps = nullptr,
                     bool trainable = true);

  /// Gradient-free convenience wrapper.
  Matrix<S> predict(const Matrix<S>& latent, int t, const Matrix<S>& condition,
                    const AttentionHook<S>* hook = nullptr, std::vector<AttentionMap<S>>* maps = nullptr);

  ad::ParameterList<S> parameters();
  std::size_t parameter_count();

 private:
  struct ResBlock {
    nn::GroupNorm<S> norm1;
    nn::Conv2d<S> conv1;
    nn::Linear<S> time_proj;
    nn::GroupNorm<S> norm2;
    nn::Conv2d<S> conv2;
    bool has_skip = false;
    nn::Conv2d<S> skip;
  };
  struct AttnBlock {
    nn::GroupNorm<S> norm;
    CrossAttentionWeights<S> attn;
  };

  ResBlock make_res(int in, int out, Rng& rng);
  ad::Var<S> run_res(ad::Tape<S>& tape, ResBlock& b, ad::Var<S> x, ad::Var<S> temb, int h, int w, bool trainable);
  ad::Var<S> run_attn(ad::Tape<S>& tape, AttnBlock& b, ad::Var<S> x, ad::Var<S> cond, int layer, int t,
                      const AttentionHook<S>* hook, std::vector<AttentionMap<S>>* maps, bool trainable);

  UNetConfig config_;
  nn::Linear<S> time1_, time2_;
  nn::Conv2d<S> conv_in_;
  std::vector<ResBlock> down_res_;
  std::vector<AttnBlock> down_attn_;
  std::vector<nn::Conv2d<S>> downsample_;
  std::vector<ResBlock> up_res_;
  nn::GroupNorm<S> out_norm_;
  nn::Conv2d<S> conv_out_;
};

extern template class UNet<float>;
extern template class UNet<double>;

}  // namespace avedit
