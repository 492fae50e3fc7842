#include "gradpaint/schedule.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

#include "gradpaint/gpt1.hpp"

namespace gradpaint {

NoiseSchedule NoiseSchedule::from_alpha_bar(std::vector<double> alpha_bar) {
  if (alpha_bar.size() < 3) throw std::invalid_argument("noise schedule needs at least 2 steps");
  if (std::abs(alpha_bar.front() - 1.0) > 1e-12) throw std::invalid_argument("noise schedule: alpha_bar[0] must be 1");
  for (std::size_t t = 1; t < alpha_bar.size(); ++t) {
    if (!(alpha_bar[t] <= alpha_bar[t - 1]) || !(alpha_bar[t] > 0.0)) {
      throw std::invalid_argument("noise schedule: alpha_bar must be positive and non-increasing (t=" +
                                  std::to_string(t) + ")");
    }
  }
  if (!(alpha_bar.back() < 0.01)) throw std::invalid_argument("noise schedule: alpha_bar[T] must be below 0.01");

  NoiseSchedule s;
  s.alpha_bar_ = std::move(alpha_bar);
  const std::size_t n = s.alpha_bar_.size();
  s.beta_.assign(n, 0.0);
  s.sigma_.assign(n, 0.0);
  for (std::size_t t = 1; t < n; ++t) {
    const double prev = s.alpha_bar_[t - 1], cur = s.alpha_bar_[t];
    s.beta_[t] = 1.0 - cur / prev;
    const double var = (1.0 - prev) / (1.0 - cur) * s.beta_[t];
    s.sigma_[t] = std::sqrt(std::max(var, 0.0));
  }
  return s;
}

NoiseSchedule make_linear_schedule(int steps) {
  if (steps < 2) throw std::invalid_argument("make_linear_schedule: T must be >= 2, got " + std::to_string(steps));
  const double scale = 1000.0 / static_cast<double>(steps);
  const double lo = 1e-4 * scale, hi = 0.02 * scale;
  std::vector<double> alpha_bar(static_cast<std::size_t>(steps) + 1, 1.0);
  for (int t = 1; t <= steps; ++t) {
    const double frac = static_cast<double>(t - 1) / static_cast<double>(steps - 1);
    const double beta = std::clamp(lo + (hi - lo) * frac, 1e-12, 0.999);
    // Short chains hit the beta cap repeatedly; hold alpha_bar at a floor so
    // the clean estimate stays computable.
    alpha_bar[static_cast<std::size_t>(t)] =
        std::max(alpha_bar[static_cast<std::size_t>(t) - 1] * (1.0 - beta), std::min(1e-10, alpha_bar[static_cast<std::size_t>(t) - 1]));
  }
  return NoiseSchedule::from_alpha_bar(std::move(alpha_bar));
}

PosteriorCoefficients posterior_coefficients(int t, const NoiseSchedule& s) {
  if (t < 1 || t > s.steps()) throw std::out_of_range("posterior step index " + std::to_string(t) + " out of range");
  const double prev = s.alpha_bar(t - 1), cur = s.alpha_bar(t);
  PosteriorCoefficients c;
  c.x0 = (prev - cur) * std::sqrt(prev) / (prev * (1.0 - cur));
  c.xt = (1.0 - prev) * std::sqrt(cur) / ((1.0 - cur) * std::sqrt(prev));
  return c;
}

ad::Var estimate_x0(const ad::Var& x_t, const ad::Var& eps, int t, const NoiseSchedule& s) {
  if (t < 1 || t > s.steps()) throw std::out_of_range("estimate_x0: step " + std::to_string(t) + " out of range");
  const double a = s.alpha_bar(t);
  if (a < 1e-12) throw std::domain_error("estimate_x0: alpha_bar below 1e-12 at t=" + std::to_string(t));
  require_same_shape(x_t.shape(), eps.shape(), "estimate_x0");
  return ad::scale(x_t - ad::scale(eps, std::sqrt(1.0 - a)), 1.0 / std::sqrt(a));
}

ad::Var ddpm_posterior_step(const ad::Var& x_t, const ad::Var& x0_hat, int t, const NoiseSchedule& s,
                            const Tensor& z) {
  if (t == 0) throw std::out_of_range("ddpm_posterior_step: no step below t = 0");
  require_same_shape(x_t.shape(), x0_hat.shape(), "ddpm_posterior_step");
  require_same_shape(x_t.shape(), z.shape(), "ddpm_posterior_step noise");
  const auto c = posterior_coefficients(t, s);
  auto mean = ad::scale(x0_hat, c.x0) + ad::scale(x_t, c.xt);
  const double sigma = s.sigma(t);
  if (sigma == 0.0) return mean;
  Tensor noise = z;
  for (auto& v : noise.data()) v *= sigma;
  return mean + x_t.tape().constant(std::move(noise));
}

Tensor forward_mix(const Tensor& x0, const Tensor& eps, int t, const NoiseSchedule& s) {
  require_same_shape(x0.shape(), eps.shape(), "forward_mix");
  const double a = s.alpha_bar(t);
  const double sa = std::sqrt(a), sn = std::sqrt(1.0 - a);
  Tensor out(x0.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = sa * x0[i] + sn * eps[i];
  return out;
}

void save_schedule(const std::filesystem::path& prefix, const NoiseSchedule& s) {
  const auto n = s.alpha_bars().size();
  gpt1::save(prefix.string() + ".alpha_bar.gpt1", Tensor(Shape{n}, s.alpha_bars()));
  gpt1::save(prefix.string() + ".sigma.gpt1", Tensor(Shape{n}, s.sigmas()));
}

NoiseSchedule load_schedule(const std::filesystem::path& prefix) {
  const Tensor ab = gpt1::load(prefix.string() + ".alpha_bar.gpt1");
  const Tensor sg = gpt1::load(prefix.string() + ".sigma.gpt1");
  if (ab.ndim() != 1 || sg.shape() != ab.shape()) throw std::runtime_error("schedule files have inconsistent shapes");
  auto s = NoiseSchedule::from_alpha_bar(ab.values());
  for (std::size_t t = 0; t < sg.size(); ++t) {
    if (std::abs(sg[t] - s.sigmas()[t]) > 1e-5) {
      throw std::runtime_error("schedule sigma file disagrees with alpha_bar at t=" + std::to_string(t));
    }
  }
  return s;
}

}  // namespace gradpaint
