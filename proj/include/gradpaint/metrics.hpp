#pragma once

// Proxy quality metrics for finished images when the data distribution is a
// known Gaussian mixture, plus the small statistics used to compare methods.

#include <string>
#include <vector>

#include "gradpaint/denoisers.hpp"
#include "gradpaint/masks.hpp"
#include "gradpaint/samplers.hpp"

namespace gradpaint {

/// -log sum_k w_k N(x; mu_k, std^2 I), evaluated with logsumexp.
double nll_under_prior(const GmmPrior& prior, const Tensor& x);

/// Alignment loss of a finished image against its mask.
double seam_energy(const Tensor& x, const Mask& mask);

/// Root mean squared error over masked pixels and channels; 0 for an empty mask.
double masked_rmse(const Tensor& x, const Tensor& reference, const Mask& mask);

/// Per-pixel sample variance (n - 1 denominator) across `samples`, averaged
/// over masked pixels and channels. An empty mask gives 0.
double masked_pixel_variance(const std::vector<Tensor>& samples, const Mask& mask);

struct PairedTest {
  std::size_t n = 0;
  double mean_diff = 0.0;  // mean of a - b
  double t_stat = 0.0;
  double p_value = 1.0;    // one-sided, alternative mean(a - b) > 0
};

/// Paired one-sided t-test that `a` exceeds `b`.
PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b);

struct DiversityRow {
  std::string method;
  double target_coverage = 0.0;
  double coverage = 0.0;
  std::size_t samples = 0;
  double variance = 0.0;
};

/// For each coverage, a centered square mask of that coverage is inpainted
/// `samples` times with independent chains; reports the masked pixel variance.
/// A coverage of 0 yields an empty region and variance 0.
std::vector<DiversityRow> diversity_study(Method method, const Denoiser& d, const Tensor& reference,
                                          const std::vector<double>& coverages, std::size_t samples,
                                          const GuidanceConfig& cfg, const NoiseSchedule& s, std::size_t threads = 1);

std::string diversity_csv(const std::vector<DiversityRow>& rows);

}  // namespace gradpaint
