#pragma once

#include "avedit/types.hpp"

#include <cstdint>
#include <random>
#include <string_view>

namespace avedit {

// Seed splitting: every subsystem draws from its own stream whose seed is
// splitmix64(master ^ fnv1a64(stream_name)). Stream names are fixed strings
// such as "init.unet.audio" or "train.noise", so adding a new stream never
// perturbs the existing ones.
std::uint64_t fnv1a64(std::string_view text);
std::uint64_t splitmix64(std::uint64_t x);
std::uint64_t derive_seed(std::uint64_t master, std::string_view stream);

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}
  Rng(std::uint64_t master, std::string_view stream) : engine_(derive_seed(master, stream)) {}

  double normal() { return normal_(engine_); }
  double uniform() { return uniform_(engine_); }
  // Inclusive on both ends.
  int uniform_int(int lo, int hi) { return std::uniform_int_distribution<int>(lo, hi)(engine_); }

  template <typename Scalar>
  Matrix<Scalar> normal_matrix(Eigen::Index rows, Eigen::Index cols, double stddev = 1.0) {
    Matrix<Scalar> m(rows, cols);
    for (Eigen::Index j = 0; j < cols; ++j)
      for (Eigen::Index i = 0; i < rows; ++i) m(i, j) = static_cast<Scalar>(stddev * normal());
    return m;
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_{0.0, 1.0};
  std::uniform_real_distribution<double> uniform_{0.0, 1.0};
};

}  // namespace avedit
