#pragma once

// GPT1 tensor files: the 4 magic bytes "GPT1", a little-endian u32 rank,
// rank little-endian u32 extents, then the row-major payload as little-endian
// IEEE-754 binary32. Values are narrowed to float on write, so a round trip
// is bit-exact for tensors whose entries are representable as float.

#include <filesystem>
#include <iosfwd>
#include <vector>

#include "gradpaint/tensor.hpp"

namespace gradpaint::gpt1 {

void write(std::ostream& os, const Tensor& t);
Tensor read(std::istream& is);

void save(const std::filesystem::path& path, const Tensor& t);
Tensor load(const std::filesystem::path& path);

std::vector<unsigned char> encode(const Tensor& t);
Tensor decode(const std::vector<unsigned char>& bytes);

}  // namespace gradpaint::gpt1
