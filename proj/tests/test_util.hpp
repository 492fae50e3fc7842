#pragma once

// Oracles shared by the test binaries. Nothing here calls library code
// beyond Tensor and the RNG, so the oracles stay independent of what they check.

#include <cmath>
#include <functional>
#include <random>

#include "gradpaint/rng.hpp"
#include "gradpaint/tensor.hpp"

namespace gradpaint::testing {

/// Central differences of a scalar function, step h.
inline Tensor numeric_gradient(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-5) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = probe[i];
    probe[i] = keep + h;
    const double up = f(probe);
    probe[i] = keep - h;
    const double down = f(probe);
    probe[i] = keep;
    g[i] = (up - down) / (2.0 * h);
  }
  return g;
}

/// Fourth-order central differences. Roundoff scales as eps |f| / h, so the
/// larger step this stencil allows matters when f is large and the gradient
/// has tiny entries.
inline Tensor numeric_gradient_5pt(const std::function<double(const Tensor&)>& f, const Tensor& x, double h = 1e-3) {
  Tensor g(x.shape());
  Tensor probe = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double keep = probe[i];
    double v[4];
    const double offsets[4] = {2.0 * h, h, -h, -2.0 * h};
    for (int k = 0; k < 4; ++k) {
      probe[i] = keep + offsets[k];
      v[k] = f(probe);
    }
    probe[i] = keep;
    g[i] = (8.0 * (v[1] - v[2]) - (v[0] - v[3])) / (12.0 * h);
  }
  return g;
}

/// Largest |a - n| / |n| over entries with |n| > floor; entries below the
/// floor must agree in absolute terms to `floor`.
inline double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-6) {
  double worst = 0.0;
  for (std::size_t i = 0; i < numeric.size(); ++i) {
    const double diff = std::abs(analytic[i] - numeric[i]);
    if (std::abs(numeric[i]) > floor) {
      worst = std::max(worst, diff / std::abs(numeric[i]));
    } else if (diff > floor) {
      worst = std::max(worst, diff / floor);
    }
  }
  return worst;
}

inline Tensor uniform_tensor(const Shape& shape, Rng& rng, double lo = -1.0, double hi = 1.0) {
  std::uniform_real_distribution<double> u(lo, hi);
  Tensor t(shape);
  for (auto& v : t.data()) v = u(rng);
  return t;
}

/// Alignment loss of one (H, W) channel written out loop by loop, with the
/// per-pixel normalizers of the image supplied by the caller. Passing the
/// normalizers of a fixed base image gives the surrogate whose derivative the
/// library's backward rule computes.
struct FieldNorms {
  std::vector<double> inv;
};

inline double forward_dx(const std::vector<double>& a, std::size_t w, std::size_t r, std::size_t c) {
  return c + 1 < w ? a[r * w + c + 1] - a[r * w + c] : 0.0;
}
inline double forward_dy(const std::vector<double>& a, std::size_t h, std::size_t w, std::size_t r, std::size_t c) {
  return r + 1 < h ? a[(r + 1) * w + c] - a[r * w + c] : 0.0;
}

inline FieldNorms field_norms(const std::vector<double>& a, std::size_t h, std::size_t w) {
  FieldNorms f;
  f.inv.resize(h * w);
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const double dx = forward_dx(a, w, r, c);
      const double dy = forward_dy(a, h, w, r, c);
      const double n = std::sqrt(dx * dx + dy * dy);
      f.inv[r * w + c] = n > 1e-8 ? 1.0 / n : 0.0;
    }
  }
  return f;
}

/// Brute-force per-channel alignment term (already divided by H W).
inline double align_channel(const std::vector<double>& img, const FieldNorms& img_norms,
                            const std::vector<double>& keep, std::size_t h, std::size_t w) {
  const FieldNorms mk = field_norms(keep, h, w);
  double acc = 0.0;
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      const std::size_t i = r * w + c;
      const double ix = forward_dx(img, w, r, c) * img_norms.inv[i];
      const double iy = forward_dy(img, h, w, r, c) * img_norms.inv[i];
      const double mx = forward_dx(keep, w, r, c) * mk.inv[i];
      const double my = forward_dy(keep, h, w, r, c) * mk.inv[i];
      const double dot = ix * mx + iy * my;
      acc += dot * dot;
    }
  }
  return acc / static_cast<double>(h * w);
}

}  // namespace gradpaint::testing
