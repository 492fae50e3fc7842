#pragma once

// Binary inpainting masks. 1 marks a pixel to synthesize, 0 a known pixel.
// Masks are (H, W) and apply to every channel of an (H, W, C) image.

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>

#include "gradpaint/tensor.hpp"

namespace gradpaint {

class Mask {
 public:
  Mask(std::size_t height, std::size_t width, bool fill = false);
  /// Accepts an (H, W) tensor whose entries are exactly 0 or 1.
  static Mask from_tensor(const Tensor& t);

  std::size_t height() const noexcept { return height_; }
  std::size_t width() const noexcept { return width_; }
  bool at(std::size_t r, std::size_t c) const { return bits_.data()[index(r, c)] != 0.0; }
  void set(std::size_t r, std::size_t c, bool v) { bits_.data()[index(r, c)] = v ? 1.0 : 0.0; }

  const Tensor& tensor() const noexcept { return bits_; }
  /// Mask repeated over `channels`, shape (H, W, C).
  Tensor expand(std::size_t channels) const;
  /// 1 - mask repeated over `channels`.
  Tensor keep(std::size_t channels) const;

  std::size_t count() const;
  double coverage() const;

  friend bool operator==(const Mask&, const Mask&) = default;

 private:
  std::size_t index(std::size_t r, std::size_t c) const {
    if (r >= height_ || c >= width_) throw std::out_of_range("Mask: pixel outside the mask");
    return r * width_ + c;
  }

  std::size_t height_;
  std::size_t width_;
  Tensor bits_;
};

/// mask * x + (1 - mask) * reference, by selection so known pixels are exact.
Tensor collage(const Tensor& x, const Tensor& reference, const Mask& mask);

enum class MaskKind { Thin, Medium, Thick, Rect, Bernoulli };

std::string to_string(MaskKind kind);
MaskKind parse_mask_kind(const std::string& name);

struct Rect {
  std::size_t top = 0;
  std::size_t left = 0;
  std::size_t height = 0;
  std::size_t width = 0;
};

/// Free-form strokes are polylines stamped with a disc brush. Zero-valued
/// ranges mean "use the default for this kind and image size".
struct MaskSpec {
  MaskKind kind = MaskKind::Thick;
  std::size_t min_strokes = 0;
  std::size_t max_strokes = 0;
  std::size_t brush_width = 0;
  double rect_probability = -1.0;  // thick masks: chance of an extra rectangle
  double p = 0.8;                  // Bernoulli: probability a pixel is masked
  std::optional<Rect> rect;        // Rect: fixed rectangle, else random
  std::uint64_t seed = 0;
};

Mask generate_mask(const MaskSpec& spec, std::size_t height, std::size_t width);

Mask rect_mask(std::size_t height, std::size_t width, const Rect& r);
/// Centered square whose side is chosen so coverage is closest to `target`.
Mask centered_square_mask(std::size_t height, std::size_t width, double target);

void save_mask_pgm(const std::filesystem::path& path, const Mask& m);
Mask load_mask_pgm(const std::filesystem::path& path);

}  // namespace gradpaint
