#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>

#include "gradpaint/schedule.hpp"
#include "test_util.hpp"

namespace gp = gradpaint;
namespace ad = gradpaint::ad;
using gp::Tensor;

TEST(Schedule, LinearScheduleEndpoints) {
  const auto s = gp::make_linear_schedule(100);
  EXPECT_EQ(s.steps(), 100);
  EXPECT_EQ(s.alpha_bar(0), 1.0);
  EXPECT_LT(s.alpha_bar(100), 0.01);
  EXPECT_EQ(s.sigma(1), 0.0);
  for (int t = 1; t <= 100; ++t) {
    EXPECT_LT(s.alpha_bar(t), s.alpha_bar(t - 1));
    EXPECT_GE(s.sigma(t), 0.0);
  }
}

TEST(Schedule, LinearScheduleMatchesIndependentProduct) {
  const int steps = 100;
  const auto s = gp::make_linear_schedule(steps);
  double prod = 1.0;
  for (int t = 1; t <= steps; ++t) {
    const double lo = 1e-4 * 1000.0 / steps, hi = 0.02 * 1000.0 / steps;
    const double beta = lo + (hi - lo) * (t - 1) / (steps - 1);
    prod *= 1.0 - beta;
    EXPECT_NEAR(s.alpha_bar(t), prod, 1e-14);
    EXPECT_NEAR(s.beta(t), beta, 1e-12);
  }
}

TEST(Schedule, TwoStepScheduleFinalSigmaIsZero) {
  const auto s = gp::make_linear_schedule(2);
  EXPECT_EQ(s.sigma(1), 0.0);
  EXPECT_LT(s.alpha_bar(2), 0.01);
}

TEST(Schedule, RejectsBadInput) {
  EXPECT_THROW(gp::make_linear_schedule(1), std::invalid_argument);
  EXPECT_THROW(gp::NoiseSchedule::from_alpha_bar({1.0, 0.5}), std::invalid_argument);
  EXPECT_THROW(gp::NoiseSchedule::from_alpha_bar({0.9, 0.5, 0.001}), std::invalid_argument);
  EXPECT_THROW(gp::NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.6, 0.001}), std::invalid_argument);
  EXPECT_THROW(gp::NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.2}), std::invalid_argument);
  EXPECT_THROW(gp::NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.0}), std::invalid_argument);
}

TEST(Schedule, EstimateX0Examples) {
  const auto s = gp::NoiseSchedule::from_alpha_bar({1.0, 0.25, 0.001});
  ad::Tape tape;
  const auto x = tape.constant(Tensor::vector({1.0}));
  const auto e = tape.constant(Tensor::vector({0.5}));
  EXPECT_NEAR(gp::estimate_x0(x, e, 1, s).value()[0], (1.0 - std::sqrt(0.75) * 0.5) / 0.5, 1e-15);
  EXPECT_NEAR(gp::estimate_x0(x, e, 1, s).value()[0], 1.133975, 1e-6);
  EXPECT_THROW(gp::estimate_x0(x, e, 0, s), std::out_of_range);
  EXPECT_THROW(gp::estimate_x0(x, e, 3, s), std::out_of_range);
}

TEST(Schedule, EstimateX0RejectsVanishingAlphaBar) {
  const auto s = gp::NoiseSchedule::from_alpha_bar({1.0, 0.5, 1e-13});
  ad::Tape tape;
  const auto x = tape.constant(Tensor::vector({1.0}));
  EXPECT_THROW(gp::estimate_x0(x, x, 2, s), std::domain_error);
}

TEST(Schedule, ForwardMixAndEstimateAreInverses) {
  const auto s = gp::make_linear_schedule(100);
  gp::Rng rng(1);
  const Tensor x0 = gp::testing::uniform_tensor({4, 4, 1}, rng);
  const Tensor eps = gp::normal_tensor({4, 4, 1}, rng);
  for (int t : {1, 10, 50, 90}) {
    ad::Tape tape(false);
    const Tensor xt = gp::forward_mix(x0, eps, t, s);
    const Tensor back = gp::estimate_x0(tape.constant(xt), tape.constant(eps), t, s).value();
    EXPECT_LT(gp::max_abs_diff(back, x0), 1e-12) << "t=" << t;
  }
}

TEST(Schedule, PlateauCollapsesCoefficients) {
  const auto s = gp::NoiseSchedule::from_alpha_bar({1.0, 0.5, 0.5, 0.001});
  const auto c = gp::posterior_coefficients(2, s);
  EXPECT_EQ(c.x0, 0.0);
  EXPECT_EQ(c.xt, 1.0);
  EXPECT_EQ(s.sigma(2), 0.0);  // beta_2 = 0 on a plateau
  ad::Tape tape(false);
  const auto x = tape.constant(Tensor::vector({0.7, -0.2}));
  const auto x0 = tape.constant(Tensor::vector({5.0, 5.0}));
  const Tensor z = Tensor::vector({1.0, 1.0});
  EXPECT_EQ(gp::ddpm_posterior_step(x, x0, 2, s, z).value(), x.value());
}

TEST(Schedule, PosteriorCoefficientsMatchDirectFormula) {
  const auto s = gp::make_linear_schedule(50);
  for (int t = 1; t <= 50; ++t) {
    const double a = s.alpha_bar(t), ap = s.alpha_bar(t - 1);
    const double c0 = (ap - a) * std::sqrt(ap) / (ap * (1.0 - a));
    const double c1 = (1.0 - ap) * std::sqrt(a) / ((1.0 - a) * std::sqrt(ap));
    const auto c = gp::posterior_coefficients(t, s);
    EXPECT_NEAR(c.x0, c0, 1e-13);
    EXPECT_NEAR(c.xt, c1, 1e-13);
    EXPECT_NEAR(s.sigma(t), std::sqrt((1.0 - ap) / (1.0 - a) * s.beta(t)), 1e-14);
  }
}

TEST(Schedule, FinalStepIsDeterministic) {
  const auto s = gp::make_linear_schedule(10);
  ad::Tape tape(false);
  const auto x = tape.constant(Tensor::vector({0.3}));
  const auto x0 = tape.constant(Tensor::vector({-0.1}));
  EXPECT_EQ(gp::ddpm_posterior_step(x, x0, 1, s, Tensor::vector({0.0})).value(),
            gp::ddpm_posterior_step(x, x0, 1, s, Tensor::vector({123.0})).value());
  EXPECT_THROW(gp::ddpm_posterior_step(x, x0, 0, s, Tensor::vector({0.0})), std::out_of_range);
}

TEST(Schedule, PosteriorStepIsDifferentiable) {
  const auto s = gp::make_linear_schedule(20);
  gp::Rng rng(2);
  const Tensor xt0 = gp::normal_tensor({3, 3, 1}, rng);
  const Tensor z = gp::normal_tensor({3, 3, 1}, rng);
  const auto f = [&](const Tensor& xt) {
    ad::Tape tape(false);
    const auto x = tape.constant(xt);
    const auto x0 = gp::estimate_x0(x, ad::scale(x, 0.3), 7, s);
    return ad::sum(ad::square(gp::ddpm_posterior_step(x, x0, 7, s, z))).value().item();
  };
  ad::Tape tape;
  const auto x = tape.leaf(xt0);
  const auto x0 = gp::estimate_x0(x, ad::scale(x, 0.3), 7, s);
  const Tensor g = ad::backward(ad::sum(ad::square(gp::ddpm_posterior_step(x, x0, 7, s, z))))[x];
  EXPECT_LT(gp::testing::max_relative_error(g, gp::testing::numeric_gradient(f, xt0)), 1e-6);
}

TEST(Schedule, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "gradpaint_schedule_test";
  std::filesystem::create_directories(dir);
  const auto s = gp::make_linear_schedule(30);
  gp::save_schedule(dir / "lin", s);
  const auto back = gp::load_schedule(dir / "lin");
  ASSERT_EQ(back.steps(), 30);
  for (int t = 0; t <= 30; ++t) {
    EXPECT_EQ(back.alpha_bar(t), static_cast<double>(static_cast<float>(s.alpha_bar(t))));
  }
  std::filesystem::remove_all(dir);
}

TEST(Schedule, ShortLinearSchedulesStayUsable) {
  for (int steps = 2; steps <= 200; ++steps) {
    const auto s = gp::make_linear_schedule(steps);
    EXPECT_LT(s.alpha_bar(steps), 0.01) << steps;
    EXPECT_GE(s.alpha_bar(steps), 1e-10) << steps;
  }
}
