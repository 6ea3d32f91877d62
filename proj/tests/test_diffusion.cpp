#include "avedit/diffusion.hpp"
#include "avedit/rng.hpp"

#include <gtest/gtest.h>

#include <cmath>

namespace avedit {
namespace {

// 40-digit products of (1 - beta_t) for the default ramp, from mpmath.
constexpr double kAlphaBar1000 = 4.035829765375683314817635161554144e-5;
constexpr double kAlphaBar500 = 7.858724288177823734328982689111245e-2;

TEST(Schedule, EndpointsAndFirstStep) {
  const NoiseSchedule s = linear_beta_schedule(1000, 1e-4, 0.02);
  EXPECT_EQ(s.steps(), 1000);
  EXPECT_EQ(s.beta(1), 1e-4);
  EXPECT_EQ(s.beta(1000), 0.02);
  EXPECT_EQ(s.alpha_bar(1), 1.0 - 1e-4);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
}

TEST(Schedule, AlphaBarMatchesHighPrecisionProduct) {
  const NoiseSchedule s = default_schedule();
  EXPECT_NEAR(s.alpha_bar(1000) / kAlphaBar1000, 1.0, 1e-12);
  EXPECT_NEAR(s.alpha_bar(500) / kAlphaBar500, 1.0, 1e-12);
}

TEST(Schedule, SingleStep) {
  const NoiseSchedule s = linear_beta_schedule(1, 0.5, 0.5);
  ASSERT_EQ(s.steps(), 1);
  EXPECT_EQ(s.betas()[0], 0.5);
  EXPECT_EQ(s.alpha_bars()[0], 0.5);
}

TEST(Schedule, RecurrenceIsExactAndDecreasing) {
  const NoiseSchedule s = default_schedule();
  EXPECT_EQ(s.alpha_bars()[0], s.alphas()[0]);
  for (int t = 1; t <= s.steps(); ++t) {
    EXPECT_EQ(s.alpha(t), 1.0 - s.beta(t));
    EXPECT_GT(s.beta(t), 0.0);
    EXPECT_LT(s.beta(t), 1.0);
    if (t > 1) {
      EXPECT_EQ(s.alpha_bar(t), s.alpha_bar(t - 1) * s.alpha(t));
      EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    }
  }
}

TEST(Schedule, RejectsBadArguments) {
  EXPECT_THROW(linear_beta_schedule(0, 1e-4, 0.02), RangeError);
  EXPECT_THROW(linear_beta_schedule(10, 0.0, 0.02), RangeError);
  EXPECT_THROW(linear_beta_schedule(10, 1e-4, 1.0), RangeError);
  EXPECT_THROW(linear_beta_schedule(10, 0.03, 0.02), RangeError);
  EXPECT_THROW(default_schedule().alpha_bar(1001), RangeError);
}

TEST(ForwardProcess, QSampleClosedForm) {
  const NoiseSchedule s = default_schedule();
  Rng rng(3);
  const MatrixXd x0 = rng.normal_matrix<double>(4, 16);
  const MatrixXd e = rng.normal_matrix<double>(4, 16);
  const MatrixXd zero = MatrixXd::Zero(4, 16);
  EXPECT_TRUE(q_sample(zero, 300, e, s).isApprox(std::sqrt(1.0 - s.alpha_bar(300)) * e));
  EXPECT_TRUE(q_sample(x0, 300, zero, s).isApprox(std::sqrt(s.alpha_bar(300)) * x0));
  const MatrixXd ones = MatrixXd::Ones(2, 2);
  const MatrixXd xt = q_sample(ones, 1000, MatrixXd::Zero(2, 2), s);
  EXPECT_NEAR(xt(0, 0), std::sqrt(kAlphaBar1000), 1e-12);
  EXPECT_NEAR(xt(0, 0), 0.00636, 5e-5);
  EXPECT_THROW(q_sample(x0, 10, MatrixXd::Zero(3, 16), s), ShapeError);
  EXPECT_THROW(q_sample(x0, 0, e, s), RangeError);
}

TEST(ForwardProcess, QStepTrivialCases) {
  const NoiseSchedule s = default_schedule();
  Rng rng(4);
  const MatrixXd e = rng.normal_matrix<double>(3, 5);
  EXPECT_TRUE(q_step(MatrixXd::Zero(3, 5), 10, e, s).isApprox(std::sqrt(s.beta(10)) * e));
  const NoiseSchedule tiny = linear_beta_schedule(2, 1e-300, 1e-300);
  const MatrixXd x = rng.normal_matrix<double>(3, 5);
  EXPECT_TRUE(q_step(x, 1, e, tiny).isApprox(x, 1e-12));
}

// Chained q_step from x0 = 0 must have variance 1 - alpha_bar_t.
TEST(ForwardProcess, ChainedStepVarianceMatchesClosedForm) {
  const NoiseSchedule s = linear_beta_schedule(1000, 1e-4, 0.02);
  const int trials = 10000;
  Rng rng(11);
  for (int target : {1, 500, 1000}) {
    MatrixXd x = MatrixXd::Zero(1, trials);
    for (int t = 1; t <= target; ++t) x = q_step(x, t, rng.normal_matrix<double>(1, trials), s);
    const double var = x.squaredNorm() / trials;
    const double expected = 1.0 - s.alpha_bar(target);
    const double se = expected * std::sqrt(2.0 / trials);
    EXPECT_NEAR(var, expected, 3.0 * se) << "t=" << target;
  }
}

TEST(Loss, EpsilonLossExamples) {
  const MatrixXd e = MatrixXd::Random(3, 4);
  EXPECT_EQ(epsilon_loss(e, e), 0.0);
  EXPECT_DOUBLE_EQ(epsilon_loss(MatrixXd::Zero(3, 4), MatrixXd::Ones(3, 4)), 1.0);
  MatrixXd a(1, 1), b(1, 1);
  a << 0.3;
  b << 0.7;
  EXPECT_NEAR(epsilon_loss(a, b), 0.16, 1e-15);
  EXPECT_THROW(epsilon_loss(a, e), ShapeError);
}

TEST(Loss, EpsilonLossPropertiesOverSeeds) {
  for (std::uint64_t seed = 0; seed < 50; ++seed) {
    Rng rng(seed);
    const MatrixXd a = rng.normal_matrix<double>(4, 6), b = rng.normal_matrix<double>(4, 6);
    EXPECT_GT(epsilon_loss(a, b), 0.0);
    EXPECT_EQ(epsilon_loss(a, b), epsilon_loss(b, a));
  }
}

TEST(Sampler, PredictX0Examples) {
  const NoiseSchedule s = default_schedule();
  Rng rng(5);
  for (int t : {1, 10, 500, 999, 1000}) {
    const MatrixXd x0 = rng.normal_matrix<double>(4, 64), e = rng.normal_matrix<double>(4, 64);
    const MatrixXd back = predict_x0(q_sample(x0, t, e, s), t, e, s);
    EXPECT_LE((back - x0).cwiseAbs().maxCoeff(), 1e-10) << "t=" << t;
  }
  const MatrixXd xt = rng.normal_matrix<double>(2, 3);
  EXPECT_TRUE(predict_x0(xt, 400, MatrixXd::Zero(2, 3), s).isApprox(xt / std::sqrt(s.alpha_bar(400))));

  // beta_1 = 0.75 makes alpha_bar_1 = 0.25.
  const NoiseSchedule quarter = linear_beta_schedule(1, 0.75, 0.75);
  const MatrixXd out = predict_x0(MatrixXd::Ones(2, 2), 1, MatrixXd::Zero(2, 2), quarter);
  EXPECT_TRUE(out.isApprox(2.0 * MatrixXd::Ones(2, 2), 1e-15));
}

TEST(Sampler, DdpmStepExamples) {
  const NoiseSchedule s = default_schedule();
  Rng rng(6);
  const MatrixXd x0 = rng.normal_matrix<double>(3, 8), e = rng.normal_matrix<double>(3, 8);
  const MatrixXd noise = rng.normal_matrix<double>(3, 8);
  const MatrixXd x1 = q_sample(x0, 1, e, s);
  EXPECT_TRUE(ddpm_step(x1, 1, e, noise, s).isApprox(predict_x0(x1, 1, e, s), 1e-12));
  const MatrixXd xt = rng.normal_matrix<double>(3, 8);
  const MatrixXd z = MatrixXd::Zero(3, 8);
  EXPECT_TRUE(ddpm_step(xt, 40, z, z, s).isApprox(xt / std::sqrt(s.alpha(40))));
  EXPECT_THROW(ddpm_step(xt, 40, z, MatrixXd::Zero(2, 8), s), ShapeError);
}

// Full DDPM chain driven by the true injected noise returns to x0.
TEST(Sampler, DdpmChainWithOracleNoiseRecoversX0) {
  const NoiseSchedule s = default_schedule();
  Rng rng(7);
  const MatrixXd x0 = rng.normal_matrix<double>(4, 64);
  const MatrixXd e = rng.normal_matrix<double>(4, 64);
  MatrixXd x = q_sample(x0, s.steps(), e, s);
  for (int t = s.steps(); t >= 1; --t) {
    // The noise that explains x as a draw of q(x_t | x0).
    const MatrixXd eps = (x - std::sqrt(s.alpha_bar(t)) * x0) / std::sqrt(1.0 - s.alpha_bar(t));
    x = ddpm_step(x, t, eps, rng.normal_matrix<double>(4, 64), s);
  }
  EXPECT_LE(std::sqrt((x - x0).array().square().mean()), 1e-3);
}

TEST(Sampler, DdimExactNoiseIdentity) {
  const NoiseSchedule s = default_schedule();
  Rng rng(8);
  for (auto [t, tp] : ddim_timesteps(1000, 50)) {
    const MatrixXd x0 = rng.normal_matrix<double>(4, 16), e = rng.normal_matrix<double>(4, 16);
    const MatrixXd next = ddim_step(q_sample(x0, t, e, s), t, tp, e, s);
    const MatrixXd want = tp == 0 ? x0 : q_sample(x0, tp, e, s);
    EXPECT_LE((next - want).cwiseAbs().maxCoeff(), 1e-9) << t << "->" << tp;
  }
}

TEST(Sampler, DdimBoundaryAndErrors) {
  const NoiseSchedule s = default_schedule();
  Rng rng(9);
  const MatrixXd xt = rng.normal_matrix<double>(2, 4), e = rng.normal_matrix<double>(2, 4);
  EXPECT_EQ(ddim_step(xt, 20, 0, e, s), predict_x0(xt, 20, e, s));
  EXPECT_EQ(ddim_step(xt, 20, 10, e, s), ddim_step(xt, 20, 10, e, s));
  EXPECT_THROW(ddim_step(xt, 10, 10, e, s), RangeError);
  EXPECT_THROW(ddim_step(xt, 10, 20, e, s), RangeError);
}

TEST(Sampler, ClippedStepWithIdentityProjectionMatchesPlainStep) {
  const NoiseSchedule s = default_schedule();
  Rng rng(10);
  const MatrixXd xt = rng.normal_matrix<double>(3, 4), e = rng.normal_matrix<double>(3, 4);
  const auto id = [](const MatrixXd& m) { return m; };
  EXPECT_TRUE(ddim_step_clipped(xt, 500, 480, e, s, id).isApprox(ddim_step(xt, 500, 480, e, s), 1e-12));
}

TEST(Sampler, TimestepsAreUniformAndEndAtZero) {
  const auto steps = ddim_timesteps(1000, 50);
  ASSERT_EQ(steps.size(), 50u);
  EXPECT_EQ(steps.front().first, 1000);
  EXPECT_EQ(steps.back().second, 0);
  for (std::size_t i = 0; i + 1 < steps.size(); ++i) {
    EXPECT_EQ(steps[i].second, steps[i + 1].first);
    EXPECT_EQ(steps[i].first - steps[i].second, 20);
  }
}

}  // namespace
}  // namespace avedit
