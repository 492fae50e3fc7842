#pragma once

// DDPM noise schedule and the two sampling equations: the clean-image
// estimate from a noise prediction and the posterior step to t - 1.
// Index convention: alpha_bar[0] = 1 (clean), alpha_bar[T] ~ 0.

#include <filesystem>
#include <vector>

#include "gradpaint/autodiff.hpp"

namespace gradpaint {

class NoiseSchedule {
 public:
  /// Validates: non-increasing, alpha_bar[0] == 1 (within 1e-12),
  /// alpha_bar[T] < 0.01, at least two steps. Posterior std is
  /// sigma_t^2 = (1 - a_{t-1}) / (1 - a_t) * beta_t.
  static NoiseSchedule from_alpha_bar(std::vector<double> alpha_bar);

  int steps() const noexcept { return static_cast<int>(alpha_bar_.size()) - 1; }
  double alpha_bar(int t) const { return alpha_bar_.at(static_cast<std::size_t>(t)); }
  double sigma(int t) const { return sigma_.at(static_cast<std::size_t>(t)); }
  double beta(int t) const { return beta_.at(static_cast<std::size_t>(t)); }
  const std::vector<double>& alpha_bars() const noexcept { return alpha_bar_; }
  const std::vector<double>& sigmas() const noexcept { return sigma_; }

 private:
  std::vector<double> alpha_bar_;
  std::vector<double> beta_;
  std::vector<double> sigma_;
};

/// T native steps with beta linear from 1e-4 * 1000/T to 0.02 * 1000/T,
/// clamped to (0, 0.999).
NoiseSchedule make_linear_schedule(int steps);

struct PosteriorCoefficients {
  double x0 = 0.0;   // weight on the clean estimate
  double xt = 0.0;   // weight on the current state
};

PosteriorCoefficients posterior_coefficients(int t, const NoiseSchedule& s);

/// x0_hat = (x_t - sqrt(1 - a_t) eps) / sqrt(a_t).
ad::Var estimate_x0(const ad::Var& x_t, const ad::Var& eps, int t, const NoiseSchedule& s);

/// x_{t-1} = c0 x0_hat + c1 x_t + sigma_t z.
ad::Var ddpm_posterior_step(const ad::Var& x_t, const ad::Var& x0_hat, int t, const NoiseSchedule& s,
                            const Tensor& z);

/// Forward mixing x_t = sqrt(a_t) x0 + sqrt(1 - a_t) eps.
Tensor forward_mix(const Tensor& x0, const Tensor& eps, int t, const NoiseSchedule& s);

/// Writes `<prefix>.alpha_bar.gpt1` and `<prefix>.sigma.gpt1`.
void save_schedule(const std::filesystem::path& prefix, const NoiseSchedule& s);
NoiseSchedule load_schedule(const std::filesystem::path& prefix);

}  // namespace gradpaint
