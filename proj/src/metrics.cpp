#include "gradpaint/metrics.hpp"

#include <boost/math/distributions/students_t.hpp>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "gradpaint/losses.hpp"
#include "gradpaint/parallel.hpp"
#include "gradpaint/rng.hpp"

namespace gradpaint {

double nll_under_prior(const GmmPrior& prior, const Tensor& x) {
  require_same_shape(prior.image_shape(), x.shape(), "nll_under_prior");
  const double var = prior.std_dev() * prior.std_dev();
  const double d = static_cast<double>(prior.dim());
  std::vector<double> terms(prior.components());
  double top = -std::numeric_limits<double>::infinity();
  for (std::size_t k = 0; k < prior.components(); ++k) {
    const auto mu = prior.mean(k).data();
    double sq = 0.0;
    for (std::size_t i = 0; i < x.size(); ++i) sq += (x[i] - mu[i]) * (x[i] - mu[i]);
    terms[k] = std::log(prior.weights()[k]) - sq / (2.0 * var);
    top = std::max(top, terms[k]);
  }
  double acc = 0.0;
  for (double v : terms) acc += std::exp(v - top);
  return -(top + std::log(acc)) + 0.5 * d * std::log(2.0 * std::numbers::pi * var);
}

double seam_energy(const Tensor& x, const Mask& mask) {
  ad::Tape tape(false);
  return alignment_loss(tape.constant(x), mask).value().item();
}

double masked_rmse(const Tensor& x, const Tensor& reference, const Mask& mask) {
  require_same_shape(x.shape(), reference.shape(), "masked_rmse");
  const Tensor m = mask.expand(x.shape().at(2));
  require_same_shape(x.shape(), m.shape(), "masked_rmse mask");
  double se = 0.0;
  std::size_t n = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (m[i] == 0.0) continue;
    se += (x[i] - reference[i]) * (x[i] - reference[i]);
    ++n;
  }
  return n == 0 ? 0.0 : std::sqrt(se / static_cast<double>(n));
}

double masked_pixel_variance(const std::vector<Tensor>& samples, const Mask& mask) {
  if (samples.size() < 2) throw std::invalid_argument("masked_pixel_variance: need at least two samples");
  const Tensor m = mask.expand(samples.front().shape().at(2));
  for (const auto& s : samples) require_same_shape(m.shape(), s.shape(), "masked_pixel_variance");
  const double n = static_cast<double>(samples.size());
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (m[i] == 0.0) continue;
    // Deviations from the first sample keep identical samples at exactly 0.
    const double pivot = samples.front()[i];
    double mean = 0.0;
    for (const auto& s : samples) mean += s[i] - pivot;
    mean /= n;
    double ss = 0.0;
    for (const auto& s : samples) ss += (s[i] - pivot - mean) * (s[i] - pivot - mean);
    total += ss / (n - 1.0);
    ++count;
  }
  return count == 0 ? 0.0 : total / static_cast<double>(count);
}

PairedTest paired_t_test(const std::vector<double>& a, const std::vector<double>& b) {
  if (a.size() != b.size()) throw std::invalid_argument("paired_t_test: samples differ in length");
  if (a.size() < 2) throw std::invalid_argument("paired_t_test: need at least two pairs");
  PairedTest out;
  out.n = a.size();
  const double n = static_cast<double>(a.size());
  for (std::size_t i = 0; i < a.size(); ++i) out.mean_diff += a[i] - b[i];
  out.mean_diff /= n;
  double ss = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double e = a[i] - b[i] - out.mean_diff;
    ss += e * e;
  }
  const double se = std::sqrt(ss / (n - 1.0) / n);
  if (se == 0.0) {
    // Identical differences: certain if positive, no evidence otherwise.
    out.t_stat = out.mean_diff > 0.0 ? std::numeric_limits<double>::infinity() : 0.0;
    out.p_value = out.mean_diff > 0.0 ? 0.0 : 1.0;
    return out;
  }
  out.t_stat = out.mean_diff / se;
  const boost::math::students_t dist(n - 1.0);
  out.p_value = boost::math::cdf(boost::math::complement(dist, out.t_stat));
  return out;
}

std::vector<DiversityRow> diversity_study(Method method, const Denoiser& d, const Tensor& reference,
                                          const std::vector<double>& coverages, std::size_t samples,
                                          const GuidanceConfig& cfg, const NoiseSchedule& s, std::size_t threads) {
  if (samples < 2) throw std::invalid_argument("diversity_study: need at least two samples per coverage");
  if (reference.ndim() != 3) throw std::invalid_argument("diversity_study: reference must be (H, W, C)");
  const std::size_t h = reference.shape()[0];
  const std::size_t w = reference.shape()[1];
  std::vector<DiversityRow> rows;
  for (double target : coverages) {
    DiversityRow row{to_string(method), target, 0.0, samples, 0.0};
    if (target <= 0.0) {
      rows.push_back(row);
      continue;
    }
    const Mask mask = centered_square_mask(h, w, target);
    row.coverage = mask.coverage();
    std::vector<Tensor> outputs(samples);
    parallel_for(samples, threads, [&](std::size_t j) {
      GuidanceConfig c = cfg;
      c.rng_seed = derive_seed(cfg.rng_seed, stream::kChain, j);
      outputs[j] = inpaint(method, d, reference, mask, c, s).image;
    });
    row.variance = masked_pixel_variance(outputs, mask);
    rows.push_back(row);
  }
  return rows;
}

std::string diversity_csv(const std::vector<DiversityRow>& rows) {
  std::ostringstream os;
  os.precision(17);
  os << "method,target_coverage,coverage,samples,variance\n";
  for (const auto& r : rows) {
    os << r.method << ',' << r.target_coverage << ',' << r.coverage << ',' << r.samples << ',' << r.variance << '\n';
  }
  return os.str();
}

}  // namespace gradpaint
