#include "gradpaint/masks.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <random>
#include <stdexcept>

#include "gradpaint/image_io.hpp"
#include "gradpaint/rng.hpp"

namespace gradpaint {

Mask::Mask(std::size_t height, std::size_t width, bool fill)
    : height_(height), width_(width), bits_({height, width}, fill ? 1.0 : 0.0) {
  if (height == 0 || width == 0) throw std::invalid_argument("Mask: zero-sized mask");
}

Mask Mask::from_tensor(const Tensor& t) {
  if (t.ndim() != 2) throw std::invalid_argument("Mask: expected (H, W), got " + shape_str(t.shape()));
  Mask m(t.shape()[0], t.shape()[1]);
  for (std::size_t i = 0; i < t.size(); ++i) {
    if (t[i] != 0.0 && t[i] != 1.0) throw std::invalid_argument("Mask: entries must be 0 or 1");
    m.bits_[i] = t[i];
  }
  return m;
}

Tensor Mask::expand(std::size_t channels) const {
  Tensor out({height_, width_, channels});
  for (std::size_t i = 0; i < bits_.size(); ++i) {
    for (std::size_t c = 0; c < channels; ++c) out[i * channels + c] = bits_[i];
  }
  return out;
}

Tensor Mask::keep(std::size_t channels) const {
  Tensor out = expand(channels);
  for (auto& v : out.data()) v = 1.0 - v;
  return out;
}

std::size_t Mask::count() const {
  return static_cast<std::size_t>(std::count(bits_.values().begin(), bits_.values().end(), 1.0));
}

double Mask::coverage() const { return static_cast<double>(count()) / static_cast<double>(bits_.size()); }

Tensor collage(const Tensor& x, const Tensor& reference, const Mask& mask) {
  require_same_shape(x.shape(), reference.shape(), "collage");
  const Shape& s = x.shape();
  if (s.size() != 3 || s[0] != mask.height() || s[1] != mask.width()) {
    throw std::invalid_argument("collage: image " + shape_str(s) + " does not match mask");
  }
  Tensor out = reference;
  const std::size_t channels = s[2];
  const Tensor& bits = mask.tensor();
  for (std::size_t i = 0; i < bits.size(); ++i) {
    if (bits[i] == 0.0) continue;
    for (std::size_t c = 0; c < channels; ++c) out[i * channels + c] = x[i * channels + c];
  }
  return out;
}

std::string to_string(MaskKind kind) {
  switch (kind) {
    case MaskKind::Thin: return "thin";
    case MaskKind::Medium: return "medium";
    case MaskKind::Thick: return "thick";
    case MaskKind::Rect: return "rect";
    case MaskKind::Bernoulli: return "bernoulli";
  }
  return "?";
}

MaskKind parse_mask_kind(const std::string& name) {
  for (auto k : {MaskKind::Thin, MaskKind::Medium, MaskKind::Thick, MaskKind::Rect, MaskKind::Bernoulli}) {
    if (to_string(k) == name) return k;
  }
  throw std::invalid_argument("unknown mask kind '" + name + "'");
}

Mask rect_mask(std::size_t height, std::size_t width, const Rect& r) {
  if (r.height == 0 || r.width == 0 || r.top + r.height > height || r.left + r.width > width) {
    throw std::invalid_argument("rect_mask: rectangle outside the image");
  }
  Mask m(height, width);
  for (std::size_t y = r.top; y < r.top + r.height; ++y) {
    for (std::size_t x = r.left; x < r.left + r.width; ++x) m.set(y, x, true);
  }
  return m;
}

Mask centered_square_mask(std::size_t height, std::size_t width, double target) {
  if (!(target > 0.0 && target <= 1.0)) throw std::invalid_argument("centered_square_mask: target in (0, 1]");
  const std::size_t limit = std::min(height, width);
  std::size_t best = 1;
  double best_err = 2.0;
  for (std::size_t side = 1; side <= limit; ++side) {
    const double cov = static_cast<double>(side * side) / static_cast<double>(height * width);
    if (std::abs(cov - target) < best_err) {
      best_err = std::abs(cov - target);
      best = side;
    }
  }
  return rect_mask(height, width, {(height - best) / 2, (width - best) / 2, best, best});
}

namespace {

void stamp_disc(Mask& m, double cy, double cx, double radius) {
  const auto h = static_cast<long>(m.height());
  const auto w = static_cast<long>(m.width());
  const long y0 = std::max(0L, static_cast<long>(std::floor(cy - radius)));
  const long y1 = std::min(h - 1, static_cast<long>(std::ceil(cy + radius)));
  const long x0 = std::max(0L, static_cast<long>(std::floor(cx - radius)));
  const long x1 = std::min(w - 1, static_cast<long>(std::ceil(cx + radius)));
  for (long y = y0; y <= y1; ++y) {
    for (long x = x0; x <= x1; ++x) {
      const double dy = static_cast<double>(y) - cy;
      const double dx = static_cast<double>(x) - cx;
      if (dy * dy + dx * dx <= radius * radius + 1e-9) m.set(static_cast<std::size_t>(y), static_cast<std::size_t>(x), true);
    }
  }
}

Rect random_rect(std::size_t height, std::size_t width, Rng& rng) {
  const std::size_t m = std::min(height, width);
  std::uniform_int_distribution<std::size_t> side(std::max<std::size_t>(1, m / 4), std::max<std::size_t>(1, m / 2));
  Rect r;
  r.height = side(rng);
  r.width = side(rng);
  r.top = std::uniform_int_distribution<std::size_t>(0, height - r.height)(rng);
  r.left = std::uniform_int_distribution<std::size_t>(0, width - r.width)(rng);
  return r;
}

struct StrokeDefaults {
  std::size_t min_strokes;
  std::size_t max_strokes;
  std::size_t width;
  double rect_probability;
};

StrokeDefaults defaults_for(MaskKind kind, std::size_t m) {
  const auto scaled = [m](double f, std::size_t floor) {
    return std::max(floor, static_cast<std::size_t>(std::lround(f * static_cast<double>(m))));
  };
  switch (kind) {
    case MaskKind::Thin: return {1, 2, 1, 0.0};
    case MaskKind::Medium: return {1, 3, scaled(0.1, 2), 0.0};
    default: return {1, 4, scaled(0.25, 3), 0.5};
  }
}

Mask stroke_mask(const MaskSpec& spec, std::size_t height, std::size_t width, Rng& rng) {
  const std::size_t m = std::min(height, width);
  StrokeDefaults d = defaults_for(spec.kind, m);
  if (spec.min_strokes) d.min_strokes = spec.min_strokes;
  if (spec.max_strokes) d.max_strokes = spec.max_strokes;
  if (spec.brush_width) d.width = spec.brush_width;
  if (spec.rect_probability >= 0.0) d.rect_probability = spec.rect_probability;
  if (d.min_strokes > d.max_strokes) throw std::invalid_argument("MaskSpec: min_strokes exceeds max_strokes");
  if (d.width > m) throw std::invalid_argument("MaskSpec: brush wider than the image");
  if (d.rect_probability > 1.0) throw std::invalid_argument("MaskSpec: rect_probability above 1");

  Mask mask(height, width);
  const double radius = static_cast<double>(d.width) / 2.0;
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  const std::size_t strokes = std::uniform_int_distribution<std::size_t>(d.min_strokes, d.max_strokes)(rng);
  for (std::size_t s = 0; s < strokes; ++s) {
    double y = unit(rng) * static_cast<double>(height - 1);
    double x = unit(rng) * static_cast<double>(width - 1);
    const int segments = std::uniform_int_distribution<int>(1, 3)(rng);
    stamp_disc(mask, y, x, radius);
    for (int seg = 0; seg < segments; ++seg) {
      const double angle = unit(rng) * 2.0 * std::numbers::pi;
      const double length = (0.25 + 0.5 * unit(rng)) * static_cast<double>(m);
      const double ny = std::clamp(y + length * std::sin(angle), 0.0, static_cast<double>(height - 1));
      const double nx = std::clamp(x + length * std::cos(angle), 0.0, static_cast<double>(width - 1));
      const double dist = std::hypot(ny - y, nx - x);
      const int samples = std::max(1, static_cast<int>(std::ceil(dist * 4.0)));
      for (int i = 1; i <= samples; ++i) {
        const double f = static_cast<double>(i) / samples;
        stamp_disc(mask, y + f * (ny - y), x + f * (nx - x), radius);
      }
      y = ny;
      x = nx;
    }
  }
  if (unit(rng) < d.rect_probability) {
    const Rect r = random_rect(height, width, rng);
    for (std::size_t yy = r.top; yy < r.top + r.height; ++yy) {
      for (std::size_t xx = r.left; xx < r.left + r.width; ++xx) mask.set(yy, xx, true);
    }
  }
  return mask;
}

}  // namespace

Mask generate_mask(const MaskSpec& spec, std::size_t height, std::size_t width) {
  if (height == 0 || width == 0) throw std::invalid_argument("generate_mask: zero-sized image");
  Rng rng(derive_seed(spec.seed, stream::kMask, 0));
  switch (spec.kind) {
    case MaskKind::Bernoulli: {
      if (!(spec.p > 0.0 && spec.p < 1.0)) throw std::invalid_argument("MaskSpec: p must lie in (0, 1)");
      Mask m(height, width);
      std::bernoulli_distribution coin(spec.p);
      for (std::size_t y = 0; y < height; ++y) {
        for (std::size_t x = 0; x < width; ++x) m.set(y, x, coin(rng));
      }
      return m;
    }
    case MaskKind::Rect:
      return rect_mask(height, width, spec.rect ? *spec.rect : random_rect(height, width, rng));
    default:
      return stroke_mask(spec, height, width, rng);
  }
}

void save_mask_pgm(const std::filesystem::path& path, const Mask& m) {
  ByteImage img{m.height(), m.width(), 1, std::string(m.height() * m.width(), '\0')};
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    img.pixels[i] = m.tensor()[i] != 0.0 ? static_cast<char>(255) : '\0';
  }
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write mask " + path.string());
  write_pnm_bytes(os, img);
}

Mask load_mask_pgm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open mask " + path.string());
  const ByteImage img = read_pnm_bytes(is);
  if (img.channels != 1) throw std::runtime_error("mask " + path.string() + " must be a grayscale PGM");
  Mask m(img.height, img.width);
  for (std::size_t i = 0; i < img.pixels.size(); ++i) {
    m.set(i / img.width, i % img.width, static_cast<unsigned char>(img.pixels[i]) >= 128);
  }
  return m;
}

}  // namespace gradpaint
