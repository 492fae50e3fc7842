#pragma once

// Binary PGM (P5) and PPM (P6) images with maxval 255. Pixels map to
// [-1, 1] as v -> 2 v / 255 - 1; tensors are (H, W, C) with C = 1 or 3.

#include <filesystem>
#include <iosfwd>
#include <string>

#include "gradpaint/tensor.hpp"

namespace gradpaint {

Tensor read_pnm(std::istream& is);
void write_pnm(std::ostream& os, const Tensor& image);

Tensor load_pnm(const std::filesystem::path& path);
void save_pnm(const std::filesystem::path& path, const Tensor& image);

/// Raw 8-bit grid, used for masks.
struct ByteImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::size_t channels = 0;
  std::string pixels;
};

ByteImage read_pnm_bytes(std::istream& is);
void write_pnm_bytes(std::ostream& os, const ByteImage& img);

}  // namespace gradpaint
