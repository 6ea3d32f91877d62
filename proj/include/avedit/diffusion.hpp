#pragma once

#include "avedit/types.hpp"

#include <cmath>
#include <string>
#include <utility>
#include <vector>

namespace avedit {

/// Variance schedule of the forward process. Timesteps are 1-based: t = 1..T.
/// alpha_bar(0) is defined as 1 so both samplers share one boundary rule.
class NoiseSchedule {
 public:
  NoiseSchedule() = default;
  explicit NoiseSchedule(std::vector<double> betas);

  int steps() const { return static_cast<int>(betas_.size()); }
  double beta(int t) const { return betas_[index(t)]; }
  double alpha(int t) const { return alphas_[index(t)]; }
  double alpha_bar(int t) const { return t == 0 ? 1.0 : alpha_bars_[index(t)]; }

  const std::vector<double>& betas() const { return betas_; }
  const std::vector<double>& alphas() const { return alphas_; }
  const std::vector<double>& alpha_bars() const { return alpha_bars_; }

  void check_step(int t) const;

 private:
  std::size_t index(int t) const {
    check_step(t);
    return static_cast<std::size_t>(t - 1);
  }

  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

/// Linear ramp of betas, inclusive of both endpoints.
NoiseSchedule linear_beta_schedule(int steps, double beta_start, double beta_end);

/// The default training schedule: 1000 steps, 1e-4 -> 0.02.
inline NoiseSchedule default_schedule() { return linear_beta_schedule(1000, 1e-4, 0.02); }

/// (t, t_prev) pairs for a deterministic sampler visiting `count` uniformly spaced
/// steps from T down to 0.
std::vector<std::pair<int, int>> ddim_timesteps(int total_steps, int count);

namespace detail {
template <typename A, typename B>
void require_same_shape(const Eigen::MatrixBase<A>& a, const Eigen::MatrixBase<B>& b, const char* what) {
  if (a.rows() != b.rows() || a.cols() != b.cols()) {
    throw ShapeError(std::string(what) + ": shape mismatch (" + std::to_string(a.rows()) + "x" +
                     std::to_string(a.cols()) + " vs " + std::to_string(b.rows()) + "x" +
                     std::to_string(b.cols()) + ")");
  }
}
}  // namespace detail

/// x_t = sqrt(alpha_bar_t) x0 + sqrt(1 - alpha_bar_t) eps.
template <typename D1, typename D2>
Matrix<typename D1::Scalar> q_sample(const Eigen::MatrixBase<D1>& x0, int t, const Eigen::MatrixBase<D2>& eps,
                                     const NoiseSchedule& sched) {
  using S = typename D1::Scalar;
  detail::require_same_shape(x0, eps, "q_sample");
  sched.check_step(t);
  const double ab = sched.alpha_bar(t);
  return static_cast<S>(std::sqrt(ab)) * x0 + static_cast<S>(std::sqrt(1.0 - ab)) * eps;
}

/// One draw of q(x_t | x_{t-1}).
template <typename D1, typename D2>
Matrix<typename D1::Scalar> q_step(const Eigen::MatrixBase<D1>& x_prev, int t, const Eigen::MatrixBase<D2>& eps,
                                   const NoiseSchedule& sched) {
  using S = typename D1::Scalar;
  detail::require_same_shape(x_prev, eps, "q_step");
  const double b = sched.beta(t);
  return static_cast<S>(std::sqrt(1.0 - b)) * x_prev + static_cast<S>(std::sqrt(b)) * eps;
}

/// Mean squared error over all elements.
template <typename D1, typename D2>
typename D1::Scalar epsilon_loss(const Eigen::MatrixBase<D1>& eps_true, const Eigen::MatrixBase<D2>& eps_pred) {
  detail::require_same_shape(eps_true, eps_pred, "epsilon_loss");
  if (eps_true.size() == 0) throw ShapeError("epsilon_loss: empty tensors");
  return (eps_true - eps_pred).squaredNorm() / static_cast<typename D1::Scalar>(eps_true.size());
}

template <typename D1, typename D2>
Matrix<typename D1::Scalar> predict_x0(const Eigen::MatrixBase<D1>& x_t, int t, const Eigen::MatrixBase<D2>& eps_pred,
                                       const NoiseSchedule& sched) {
  using S = typename D1::Scalar;
  detail::require_same_shape(x_t, eps_pred, "predict_x0");
  sched.check_step(t);
  const double ab = sched.alpha_bar(t);
  return (x_t - static_cast<S>(std::sqrt(1.0 - ab)) * eps_pred) / static_cast<S>(std::sqrt(ab));
}

/// Ancestral step x_t -> x_{t-1} with the fixed posterior variance
/// beta_t (1 - alpha_bar_{t-1}) / (1 - alpha_bar_t).
template <typename D1, typename D2, typename D3>
Matrix<typename D1::Scalar> ddpm_step(const Eigen::MatrixBase<D1>& x_t, int t, const Eigen::MatrixBase<D2>& eps_pred,
                                      const Eigen::MatrixBase<D3>& noise, const NoiseSchedule& sched) {
  using S = typename D1::Scalar;
  detail::require_same_shape(x_t, eps_pred, "ddpm_step");
  detail::require_same_shape(x_t, noise, "ddpm_step noise");
  const double b = sched.beta(t);
  const double a = sched.alpha(t);
  const double ab = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t - 1);
  const double variance = b * (1.0 - ab_prev) / (1.0 - ab);
  Matrix<S> mean = (x_t - static_cast<S>(b / std::sqrt(1.0 - ab)) * eps_pred) / static_cast<S>(std::sqrt(a));
  if (variance > 0.0) mean += static_cast<S>(std::sqrt(variance)) * noise;
  return mean;
}

/// Deterministic (eta = 0) step x_t -> x_{t_prev}; t_prev = 0 yields the x0 estimate.
template <typename D1, typename D2>
Matrix<typename D1::Scalar> ddim_step(const Eigen::MatrixBase<D1>& x_t, int t, int t_prev,
                                      const Eigen::MatrixBase<D2>& eps_pred, const NoiseSchedule& sched) {
  using S = typename D1::Scalar;
  if (t_prev >= t || t_prev < 0) {
    throw RangeError("ddim_step: need 0 <= t_prev < t, got t=" + std::to_string(t) +
                     " t_prev=" + std::to_string(t_prev));
  }
  Matrix<S> x0 = predict_x0(x_t, t, eps_pred, sched);
  if (t_prev == 0) return x0;
  const double ab_prev = sched.alpha_bar(t_prev);
  return static_cast<S>(std::sqrt(ab_prev)) * x0 + static_cast<S>(std::sqrt(1.0 - ab_prev)) * eps_pred;
}

/// ddim_step with the x0 estimate passed through `project` first; the noise
/// estimate is recomputed from the projected x0 so the step stays consistent.
template <typename D1, typename D2, typename Project>
Matrix<typename D1::Scalar> ddim_step_clipped(const Eigen::MatrixBase<D1>& x_t, int t, int t_prev,
                                              const Eigen::MatrixBase<D2>& eps_pred, const NoiseSchedule& sched,
                                              Project&& project) {
  using S = typename D1::Scalar;
  if (t_prev >= t || t_prev < 0) {
    throw RangeError("ddim_step: need 0 <= t_prev < t, got t=" + std::to_string(t) +
                     " t_prev=" + std::to_string(t_prev));
  }
  const Matrix<S> x0 = project(predict_x0(x_t, t, eps_pred, sched));
  if (t_prev == 0) return x0;
  const double ab = sched.alpha_bar(t);
  const double ab_prev = sched.alpha_bar(t_prev);
  const Matrix<S> eps = (x_t - static_cast<S>(std::sqrt(ab)) * x0) / static_cast<S>(std::sqrt(1.0 - ab));
  return static_cast<S>(std::sqrt(ab_prev)) * x0 + static_cast<S>(std::sqrt(1.0 - ab_prev)) * eps;
}

}  // namespace avedit
