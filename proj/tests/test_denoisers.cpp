#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <numbers>

#include "gradpaint/denoisers.hpp"
#include "gradpaint/experiments.hpp"
#include "gradpaint/schedule.hpp"
#include "test_util.hpp"

namespace gp = gradpaint;
namespace ad = gradpaint::ad;
using gp::Tensor;

namespace {

// log p_t(x) for the noised mixture, summed directly in long double.
double log_marginal(const gp::GmmPrior& prior, const Tensor& x, double ab) {
  const long double a = std::sqrt(static_cast<long double>(ab));
  const long double var = ab * prior.std_dev() * prior.std_dev() + (1.0L - ab);
  std::vector<long double> terms;
  for (std::size_t k = 0; k < prior.components(); ++k) {
    long double d2 = 0;
    for (std::size_t i = 0; i < x.size(); ++i) {
      const long double r = x[i] - a * prior.mean(k)[i];
      d2 += r * r;
    }
    terms.push_back(std::log(static_cast<long double>(prior.weights()[k])) - d2 / (2 * var));
  }
  long double top = terms[0];
  for (auto v : terms) top = std::max(top, v);
  long double acc = 0;
  for (auto v : terms) acc += std::exp(v - top);
  const long double d = static_cast<long double>(x.size());
  return static_cast<double>(top + std::log(acc) - 0.5L * d * std::log(2 * std::numbers::pi_v<long double> * var));
}

gp::GmmPrior random_prior(gp::Rng& rng, const gp::Shape& shape, std::size_t k) {
  std::uniform_real_distribution<double> u(0.2, 1.0);
  std::vector<double> w(k);
  double total = 0;
  for (auto& v : w) total += (v = u(rng));
  for (auto& v : w) v /= total;
  std::vector<Tensor> means;
  for (std::size_t i = 0; i < k; ++i) means.push_back(gp::testing::uniform_tensor(shape, rng));
  return gp::GmmPrior(w, means, std::uniform_real_distribution<double>(0.1, 1.0)(rng));
}

Tensor eps_of(const gp::GmmPrior& prior, const Tensor& x, int t, const gp::NoiseSchedule& s,
              std::optional<std::size_t> cond = std::nullopt) {
  ad::Tape tape(false);
  return gp::gmm_eps(prior, tape.constant(x), t, s, cond).value();
}

double rel_norm_error(const Tensor& a, const Tensor& b) {
  double num = 0, den = 0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    num += (a[i] - b[i]) * (a[i] - b[i]);
    den += b[i] * b[i];
  }
  return std::sqrt(num / std::max(den, 1e-300));
}

}  // namespace

TEST(GmmPrior, RejectsInvalidParameters) {
  const Tensor m({2, 2, 1});
  EXPECT_THROW(gp::GmmPrior({}, {}, 1.0), std::invalid_argument);
  EXPECT_THROW(gp::GmmPrior({0.5, 0.5}, {m}, 1.0), std::invalid_argument);
  EXPECT_THROW(gp::GmmPrior({1.0}, {m}, 0.0), std::invalid_argument);
  EXPECT_THROW(gp::GmmPrior({0.5, 0.4}, {m, m}, 1.0), std::invalid_argument);
  EXPECT_THROW(gp::GmmPrior({1.5, -0.5}, {m, m}, 1.0), std::invalid_argument);
  EXPECT_THROW(gp::GmmPrior({0.5, 0.5}, {m, Tensor({2, 1, 1})}, 1.0), std::invalid_argument);
  EXPECT_NO_THROW(gp::GmmPrior({0.5, 0.5 + 5e-10}, {m, m}, 1.0));
}

TEST(GmmPrior, SaveLoadRoundTrip) {
  gp::Rng rng(3);
  const auto prior = random_prior(rng, {3, 2, 2}, 3);
  const auto path = std::filesystem::temp_directory_path() / "gradpaint_prior_test.json";
  gp::save_gmm(path, prior);
  const auto back = gp::load_gmm(path);
  ASSERT_EQ(back.components(), 3u);
  EXPECT_EQ(back.image_shape(), prior.image_shape());
  EXPECT_EQ(back.std_dev(), prior.std_dev());
  for (std::size_t k = 0; k < 3; ++k) {
    EXPECT_EQ(back.weights()[k], prior.weights()[k]);
    EXPECT_EQ(back.mean(k), prior.mean(k));
  }
  std::filesystem::remove(path);
  EXPECT_THROW(gp::load_gmm(path), std::runtime_error);
}

TEST(GmmEps, StandardGaussianClosedForm) {
  const auto s = gp::make_linear_schedule(100);
  const gp::GmmPrior prior({1.0}, {Tensor({2, 2, 1})}, 1.0);
  gp::Rng rng(4);
  const Tensor x = gp::normal_tensor({2, 2, 1}, rng);
  for (int t : {0, 1, 37, 100}) {
    const Tensor e = eps_of(prior, x, t, s);
    for (std::size_t i = 0; i < x.size(); ++i) {
      EXPECT_NEAR(e[i], std::sqrt(1.0 - s.alpha_bar(t)) * x[i], 1e-14);
    }
  }
}

TEST(GmmEps, VanishesAtAnIsolatedComponentMean) {
  const auto s = gp::make_linear_schedule(100);
  const Tensor m0({2, 2, 1}, -3.0), m1({2, 2, 1}, 3.0);
  const gp::GmmPrior prior({0.5, 0.5}, {m0, m1}, 0.2);
  const int t = 20;
  Tensor x = m0;
  for (auto& v : x.data()) v *= std::sqrt(s.alpha_bar(t));
  const Tensor e = eps_of(prior, x, t, s);
  const Tensor fd = gp::testing::numeric_gradient([&](const Tensor& p) { return log_marginal(prior, p, s.alpha_bar(t)); }, x);
  for (std::size_t i = 0; i < x.size(); ++i) {
    EXPECT_NEAR(e[i], 0.0, 1e-12);
    EXPECT_NEAR(fd[i], 0.0, 1e-8);
  }
}

TEST(GmmEps, MatchesFiniteDifferenceOfLogDensity) {
  const auto s = gp::make_linear_schedule(100);
  gp::Rng rng(5);
  std::uniform_int_distribution<int> step(1, 100);
  std::uniform_int_distribution<std::size_t> comps(1, 4);
  for (int trial = 0; trial < 100; ++trial) {
    const auto prior = random_prior(rng, {2, 2, 1}, comps(rng));
    const int t = step(rng);
    const Tensor x = gp::normal_tensor({2, 2, 1}, rng);
    const double ab = s.alpha_bar(t);
    Tensor fd = gp::testing::numeric_gradient([&](const Tensor& p) { return log_marginal(prior, p, ab); }, x);
    for (auto& v : fd.data()) v *= -std::sqrt(1.0 - ab);
    EXPECT_LT(rel_norm_error(eps_of(prior, x, t, s), fd), 1e-5) << "trial " << trial << " t=" << t;
  }
}

TEST(GmmEps, ConditioningEqualsSingleComponentPriorExactly) {
  const auto s = gp::make_linear_schedule(50);
  gp::Rng rng(6);
  const auto prior = random_prior(rng, {3, 3, 1}, 3);
  const Tensor x = gp::normal_tensor({3, 3, 1}, rng);
  for (std::size_t k = 0; k < 3; ++k) {
    const gp::GmmPrior single({1.0}, {prior.mean(k)}, prior.std_dev());
    EXPECT_EQ(eps_of(prior, x, 10, s, k), eps_of(single, x, 10, s));
  }
  EXPECT_THROW(eps_of(prior, x, 10, s, 3), std::out_of_range);
  EXPECT_THROW(gp::GmmDenoiser(prior, 7), std::out_of_range);
}

TEST(GmmEps, BackwardMatchesFiniteDifferences) {
  const auto s = gp::make_linear_schedule(100);
  gp::Rng rng(7);
  const auto prior = random_prior(rng, {3, 3, 1}, 3);
  const Tensor x0 = gp::normal_tensor({3, 3, 1}, rng);
  const Tensor probe = gp::normal_tensor({3, 3, 1}, rng);
  const int t = 40;
  const auto contract = [&](const Tensor& x) {
    const Tensor e = eps_of(prior, x, t, s);
    double acc = 0;
    for (std::size_t i = 0; i < e.size(); ++i) acc += e[i] * probe[i];
    return acc;
  };
  ad::Tape tape;
  const auto leaf = tape.leaf(x0);
  const auto out = ad::sum(gp::gmm_eps(prior, leaf, t, s) * tape.constant(probe));
  const Tensor g = ad::backward(out)[leaf];
  EXPECT_LT(gp::testing::max_relative_error(g, gp::testing::numeric_gradient(contract, x0)), 1e-4);
}

TEST(GmmEps, ErrorPaths) {
  const auto s = gp::make_linear_schedule(10);
  const gp::GmmPrior prior({1.0}, {Tensor({2, 2, 1})}, 1e-7);
  ad::Tape tape(false);
  EXPECT_THROW(gp::gmm_eps(prior, tape.constant(Tensor({2, 2, 1})), 0, s), std::domain_error);
  EXPECT_NO_THROW(gp::gmm_eps(prior, tape.constant(Tensor({2, 2, 1})), 1, s));
  EXPECT_THROW(gp::gmm_eps(prior, tape.constant(Tensor({2, 2, 1})), 11, s), std::out_of_range);
  EXPECT_THROW(gp::gmm_eps(prior, tape.constant(Tensor({2, 3, 1})), 1, s), std::invalid_argument);
}

TEST(ConvDenoiser, FreshModelPredictsZeroForAllSizes) {
  const auto s = gp::make_linear_schedule(20);
  for (std::size_t side : {8u, 16u, 32u}) {
    gp::ConvDenoiserConfig cfg;
    cfg.height = cfg.width = side;
    const gp::ConvDenoiser model(cfg, 1);
    gp::Rng rng(side);
    ad::Tape tape(false);
    const Tensor out = model.predict_eps(tape.constant(gp::normal_tensor({side, side, 1}, rng)), 5, s).value();
    EXPECT_EQ(out.shape(), (gp::Shape{side, side, 1}));
    for (double v : out.data()) EXPECT_EQ(v, 0.0);
  }
}

TEST(ConvDenoiser, RejectsBadInputs) {
  const auto s = gp::make_linear_schedule(20);
  gp::ConvDenoiserConfig cfg;
  cfg.height = cfg.width = 8;
  const gp::ConvDenoiser model(cfg, 1);
  ad::Tape tape(false);
  EXPECT_THROW(model.predict_eps(tape.constant(Tensor({8, 4, 1})), 5, s), std::invalid_argument);
  EXPECT_THROW(model.predict_eps(tape.constant(Tensor({8, 8, 1})), 0, s), std::out_of_range);
  cfg.embed_dim = 3;
  EXPECT_THROW(gp::ConvDenoiser(cfg, 1), std::invalid_argument);
}

TEST(ConvDenoiser, BackwardThroughNetworkMatchesFiniteDifferences) {
  const auto s = gp::make_linear_schedule(20);
  gp::ConvDenoiserConfig cfg;
  cfg.height = cfg.width = 4;
  cfg.hidden = 4;
  gp::ConvDenoiser model(cfg, 2);
  gp::Rng rng(8);
  for (auto& p : model.params()) p.value = gp::normal_tensor(p.value.shape(), rng);  // non-zero last layer
  const Tensor x0 = gp::normal_tensor({4, 4, 1}, rng);
  const auto f = [&](const Tensor& x) {
    ad::Tape tape(false);
    return ad::sum(ad::square(model.predict_eps(tape.constant(x), 3, s))).value().item();
  };
  ad::Tape tape;
  const auto leaf = tape.leaf(x0);
  const Tensor g = ad::backward(ad::sum(ad::square(model.predict_eps(leaf, 3, s))))[leaf];
  EXPECT_LT(gp::testing::max_relative_error(g, gp::testing::numeric_gradient(f, x0), 1e-4), 1e-4);
}

TEST(ConvDenoiser, SaveLoadRoundTrip) {
  const auto dir = std::filesystem::temp_directory_path() / "gradpaint_conv_test";
  std::filesystem::remove_all(dir);
  gp::ConvDenoiserConfig cfg;
  cfg.height = 8;
  cfg.width = 6;
  cfg.hidden = 5;
  gp::ConvDenoiser model(cfg, 9);
  gp::Rng rng(10);
  for (auto& p : model.params()) p.value = gp::normal_tensor(p.value.shape(), rng);
  model.save(dir);
  const auto back = gp::ConvDenoiser::load(dir);
  ASSERT_EQ(back.params().size(), model.params().size());
  // GPT1 stores float32.
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    EXPECT_EQ(back.params()[i].name, model.params()[i].name);
    EXPECT_LT(gp::max_abs_diff(back.params()[i].value, model.params()[i].value), 1e-6);
  }
  std::filesystem::remove(dir / "conv0.bias.gpt1");
  EXPECT_THROW(gp::ConvDenoiser::load(dir), std::runtime_error);
  std::filesystem::remove_all(dir);
}

TEST(Training, ZeroStepsLeavesModelUnchanged) {
  gp::ConvDenoiserConfig cfg;
  cfg.height = cfg.width = 8;
  const gp::ConvDenoiser model(cfg, 11);
  gp::TrainConfig tc;
  tc.steps = 0;
  const auto data = [](gp::Rng&) { return Tensor({8, 8, 1}); };
  const auto result = gp::train_denoiser(model, data, gp::make_linear_schedule(20), tc);
  EXPECT_TRUE(result.losses.empty());
  for (std::size_t i = 0; i < model.params().size(); ++i) {
    EXPECT_EQ(result.model.params()[i].value, model.params()[i].value);
  }
}

TEST(Training, RejectsBadConfigAndNonFiniteLoss) {
  gp::ConvDenoiserConfig cfg;
  cfg.height = cfg.width = 4;
  cfg.hidden = 4;
  const gp::ConvDenoiser model(cfg, 12);
  const auto s = gp::make_linear_schedule(20);
  const auto data = [](gp::Rng&) { return Tensor({4, 4, 1}); };
  gp::TrainConfig tc;
  tc.batch = 0;
  EXPECT_THROW(gp::train_denoiser(model, data, s, tc), std::invalid_argument);
  tc = {};
  tc.momentum = 1.0;
  EXPECT_THROW(gp::train_denoiser(model, data, s, tc), std::invalid_argument);
  tc = {};
  tc.steps = 5;
  const auto bad = [](gp::Rng&) {
    Tensor x({4, 4, 1});
    x[0] = std::numeric_limits<double>::quiet_NaN();
    return x;
  };
  try {
    gp::train_denoiser(model, bad, s, tc);
    FAIL();
  } catch (const std::runtime_error& e) {
    EXPECT_NE(std::string(e.what()).find("step 0"), std::string::npos);
  }
}

TEST(Training, ZeroPredictorScoresOne) {
  gp::ConvDenoiserConfig cfg;
  cfg.height = cfg.width = 8;
  const gp::ConvDenoiser model(cfg, 13);
  const auto data = [](gp::Rng& rng) { return gp::testing::uniform_tensor({8, 8, 1}, rng); };
  // Mean of 64 * 2000 squared standard normals: standard error ~ 0.004.
  EXPECT_NEAR(gp::denoising_loss(model, data, gp::make_linear_schedule(50), 2000, 1), 1.0, 0.02);
}

TEST(Training, SinglePointLossDecreasesOverMovingWindows) {
  gp::ConvDenoiserConfig cfg;
  cfg.height = cfg.width = 8;
  cfg.hidden = 16;
  const gp::ConvDenoiser model(cfg, 14);
  gp::Rng rng(15);
  const Tensor point = gp::testing::uniform_tensor({8, 8, 1}, rng);
  const auto data = [&](gp::Rng&) { return point; };
  gp::TrainConfig tc;
  tc.steps = 400;
  tc.seed = 3;
  const auto s = gp::make_linear_schedule(50);
  const auto result = gp::train_denoiser(model, data, s, tc);
  ASSERT_EQ(result.losses.size(), 400u);
  std::vector<double> window;
  for (std::size_t start = 0; start + 100 <= 400; start += 100) {
    double acc = 0;
    for (std::size_t i = start; i < start + 100; ++i) acc += result.losses[i];
    window.push_back(acc / 100);
  }
  for (std::size_t i = 1; i < window.size(); ++i) EXPECT_LT(window[i], window[i - 1]) << "window " << i;
  EXPECT_LT(gp::denoising_loss(result.model, data, s, 500, 7), 0.9);
}

TEST(Training, LearnsTheSmoothPriorBetterThanZero) {
  const auto prior = gp::make_named_prior("smooth4", 8, 8, 1, 0.1);
  const auto data = [&](gp::Rng& rng) { return prior.sample(rng); };
  const auto s = gp::make_linear_schedule(50);
  gp::ConvDenoiserConfig cfg;
  cfg.height = cfg.width = 8;
  gp::TrainConfig tc;
  tc.steps = 600;
  tc.seed = 4;
  const auto result = gp::train_denoiser(gp::ConvDenoiser(cfg, 16), data, s, tc);
  const double zero = gp::denoising_loss(gp::ConvDenoiser(cfg, 16), data, s, 500, 8);
  const double trained = gp::denoising_loss(result.model, data, s, 500, 8);
  EXPECT_LT(trained, 0.9 * zero) << "trained " << trained << " zero " << zero;
}
