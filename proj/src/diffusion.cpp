#include "avedit/diffusion.hpp"

#include <cmath>

namespace avedit {

NoiseSchedule::NoiseSchedule(std::vector<double> betas) : betas_(std::move(betas)) {
  if (betas_.empty()) throw RangeError("noise schedule needs at least one step");
  alphas_.resize(betas_.size());
  alpha_bars_.resize(betas_.size());
  double running = 1.0;
  for (std::size_t i = 0; i < betas_.size(); ++i) {
    const double b = betas_[i];
    if (!(b > 0.0 && b < 1.0)) throw RangeError("beta out of (0,1) at step " + std::to_string(i + 1));
    alphas_[i] = 1.0 - b;
    running *= alphas_[i];
    alpha_bars_[i] = running;
  }
}

void NoiseSchedule::check_step(int t) const {
  if (t < 1 || t > steps()) {
    throw RangeError("timestep " + std::to_string(t) + " outside [1, " + std::to_string(steps()) + "]");
  }
}

NoiseSchedule linear_beta_schedule(int steps, double beta_start, double beta_end) {
  if (steps < 1) throw RangeError("schedule length must be positive");
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw RangeError("need 0 < beta_start <= beta_end < 1");
  }
  std::vector<double> betas(static_cast<std::size_t>(steps));
  if (steps == 1) {
    betas[0] = beta_start;
  } else {
    for (int i = 0; i < steps; ++i) {
      const double f = static_cast<double>(i) / (steps - 1);
      betas[static_cast<std::size_t>(i)] = beta_start + f * (beta_end - beta_start);
    }
    betas.back() = beta_end;
  }
  return NoiseSchedule(std::move(betas));
}

std::vector<std::pair<int, int>> ddim_timesteps(int total_steps, int count) {
  if (count < 1 || count > total_steps) throw RangeError("sampler step count must be in [1, T]");
  std::vector<int> ts;
  ts.reserve(static_cast<std::size_t>(count) + 1);
  for (int i = 0; i <= count; ++i) {
    const double t = total_steps - static_cast<double>(i) * total_steps / count;
    ts.push_back(static_cast<int>(std::lround(t)));
  }
  std::vector<std::pair<int, int>> pairs;
  for (int i = 0; i < count; ++i) pairs.emplace_back(ts[i], ts[i + 1]);
  return pairs;
}

}  // namespace avedit
