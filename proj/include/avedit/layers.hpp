#pragma once

#include "avedit/autodiff.hpp"
#include "avedit/rng.hpp"

#include <cmath>
#include <string>

namespace avedit::nn {

using ad::Parameter;
using ad::ParameterList;
using ad::Tape;
using ad::Var;

/// Binds a parameter to the tape: tracked when trainable, constant otherwise.
template <typename S>
Var<S> bind(Tape<S>& tape, Parameter<S>& p, bool trainable) {
  return trainable ? tape.parameter(p) : tape.constant(p.value);
}

/// Row-convention affine map: y = x W + b, x is (N x in).
template <typename S>
struct Linear {
  Parameter<S> weight;  // in x out
  Parameter<S> bias;    // 1 x out

  Linear() = default;
  Linear(int in, int out, Rng& rng, bool zero_init = false) {
    weight = Parameter<S>(zero_init ? Matrix<S>::Zero(in, out)
                                    : rng.normal_matrix<S>(in, out, 1.0 / std::sqrt(static_cast<double>(in))));
    bias = Parameter<S>(Matrix<S>::Zero(1, out));
  }

  int in_features() const { return static_cast<int>(weight.value.rows()); }
  int out_features() const { return static_cast<int>(weight.value.cols()); }

  Var<S> operator()(Tape<S>& tape, Var<S> x, bool trainable) {
    return ad::add_row_vector(ad::matmul(x, bind(tape, weight, trainable)), bind(tape, bias, trainable));
  }

  void collect(const std::string& prefix, ParameterList<S>& out) {
    out.emplace_back(prefix + ".weight", &weight);
    out.emplace_back(prefix + ".bias", &bias);
  }
};

/// Square convolution on (channels x h*w) maps, padding k/2.
template <typename S>
struct Conv2d {
  Parameter<S> weight;  // out x in*k*k
  Parameter<S> bias;    // out x 1
  int kernel = 3;
  int stride = 1;

  Conv2d() = default;
  Conv2d(int in, int out, int k, int s, Rng& rng, bool zero_init = false) : kernel(k), stride(s) {
    const double fan_in = static_cast<double>(in) * k * k;
    weight = Parameter<S>(zero_init ? Matrix<S>::Zero(out, in * k * k)
                                    : rng.normal_matrix<S>(out, in * k * k, 1.0 / std::sqrt(fan_in)));
    bias = Parameter<S>(Matrix<S>::Zero(out, 1));
  }

  Var<S> operator()(Tape<S>& tape, Var<S> x, int& h, int& w, bool trainable) {
    int oh = 0, ow = 0;
    Var<S> y = ad::conv2d(x, bind(tape, weight, trainable), bind(tape, bias, trainable), h, w, kernel, stride, oh, ow);
    h = oh;
    w = ow;
    return y;
  }

  void collect(const std::string& prefix, ParameterList<S>& out) {
    out.emplace_back(prefix + ".weight", &weight);
    out.emplace_back(prefix + ".bias", &bias);
  }
};

/// Group normalization over (channels x positions) with per-channel affine.
template <typename S>
struct GroupNorm {
  Parameter<S> gamma;  // C x 1
  Parameter<S> beta;   // C x 1
  int groups = 1;

  GroupNorm() = default;
  GroupNorm(int channels, int g) : groups(g) {
    if (channels % g != 0) {
      throw ShapeError("group norm: " + std::to_string(channels) + " channels not divisible by " + std::to_string(g));
    }
    gamma = Parameter<S>(Matrix<S>::Ones(channels, 1));
    beta = Parameter<S>(Matrix<S>::Zero(channels, 1));
  }

  Var<S> operator()(Tape<S>& tape, Var<S> x, bool trainable) {
    Var<S> n = ad::normalize(x, groups, false, static_cast<S>(1e-5));
    return ad::add_col_vector(ad::mul_col_vector(n, bind(tape, gamma, trainable)), bind(tape, beta, trainable));
  }

  void collect(const std::string& prefix, ParameterList<S>& out) {
    out.emplace_back(prefix + ".gamma", &gamma);
    out.emplace_back(prefix + ".beta", &beta);
  }
};

/// Layer normalization over the feature axis of (N x d) token matrices.
template <typename S>
struct LayerNorm {
  Parameter<S> gamma;  // 1 x d
  Parameter<S> beta;   // 1 x d

  LayerNorm() = default;
  explicit LayerNorm(int d) {
    gamma = Parameter<S>(Matrix<S>::Ones(1, d));
    beta = Parameter<S>(Matrix<S>::Zero(1, d));
  }

  Var<S> operator()(Tape<S>& tape, Var<S> x, bool trainable) {
    Var<S> n = ad::normalize(x, 0, true, static_cast<S>(1e-5));
    return ad::add_row_vector(ad::mul_row_vector(n, bind(tape, gamma, trainable)), bind(tape, beta, trainable));
  }

  void collect(const std::string& prefix, ParameterList<S>& out) {
    out.emplace_back(prefix + ".gamma", &gamma);
    out.emplace_back(prefix + ".beta", &beta);
  }
};

/// Transformer-style sinusoidal encoding of a scalar position (1 x width).
template <typename S>
RowVector<S> sinusoidal_embedding(double position, int width) {
  RowVector<S> e(width);
  const int half = width / 2;
  for (int i = 0; i < half; ++i) {
    const double freq = std::exp(-std::log(10000.0) * i / std::max(half, 1));
    e(i) = static_cast<S>(std::sin(position * freq));
    e(half + i) = static_cast<S>(std::cos(position * freq));
  }
  if (width % 2 == 1) e(width - 1) = S(0);
  return e;
}

}  // namespace avedit::nn
