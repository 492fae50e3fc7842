#include "gradpaint/gpt1.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>
#include <sstream>
#include <stdexcept>

namespace gradpaint::gpt1 {

namespace {

constexpr std::array<char, 4> kMagic{'G', 'P', 'T', '1'};
constexpr std::uint32_t kMaxRank = 16;

void put_u32(std::ostream& os, std::uint32_t v) {
  const std::array<char, 4> b{static_cast<char>(v & 0xFF), static_cast<char>((v >> 8) & 0xFF),
                              static_cast<char>((v >> 16) & 0xFF), static_cast<char>((v >> 24) & 0xFF)};
  os.write(b.data(), 4);
}

std::uint32_t get_u32(std::istream& is, const char* what) {
  std::array<unsigned char, 4> b{};
  if (!is.read(reinterpret_cast<char*>(b.data()), 4)) {
    throw std::runtime_error(std::string("GPT1: truncated while reading ") + what);
  }
  return static_cast<std::uint32_t>(b[0]) | (static_cast<std::uint32_t>(b[1]) << 8) |
         (static_cast<std::uint32_t>(b[2]) << 16) | (static_cast<std::uint32_t>(b[3]) << 24);
}

}  // namespace

void write(std::ostream& os, const Tensor& t) {
  if (t.ndim() > kMaxRank) throw std::invalid_argument("GPT1: rank too large");
  os.write(kMagic.data(), 4);
  put_u32(os, static_cast<std::uint32_t>(t.ndim()));
  for (auto e : t.shape()) {
    if (e > std::numeric_limits<std::uint32_t>::max()) throw std::invalid_argument("GPT1: extent exceeds u32");
    put_u32(os, static_cast<std::uint32_t>(e));
  }
  for (double v : t.data()) {
    if (!std::isfinite(v)) throw std::invalid_argument("GPT1: refusing to write a non-finite value");
    const auto f = static_cast<float>(v);
    put_u32(os, std::bit_cast<std::uint32_t>(f));
  }
  if (!os) throw std::runtime_error("GPT1: write failed");
}

Tensor read(std::istream& is) {
  std::array<char, 4> magic{};
  if (!is.read(magic.data(), 4) || magic != kMagic) throw std::runtime_error("GPT1: bad magic");
  const std::uint32_t rank = get_u32(is, "rank");
  if (rank > kMaxRank) throw std::runtime_error("GPT1: rank " + std::to_string(rank) + " too large");
  Shape shape(rank);
  for (auto& e : shape) e = get_u32(is, "extent");
  const std::size_t n = shape_numel(shape);
  std::vector<double> data(n);
  for (std::size_t i = 0; i < n; ++i) {
    data[i] = static_cast<double>(std::bit_cast<float>(get_u32(is, "payload")));
  }
  if (is.peek() != std::char_traits<char>::eof()) throw std::runtime_error("GPT1: trailing bytes after payload");
  return Tensor::from_external(std::move(shape), std::move(data));
}

void save(const std::filesystem::path& path, const Tensor& t) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("GPT1: cannot open " + path.string() + " for writing");
  write(os, t);
}

Tensor load(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("GPT1: cannot open " + path.string());
  return read(is);
}

std::vector<unsigned char> encode(const Tensor& t) {
  std::ostringstream os(std::ios::binary);
  write(os, t);
  const std::string s = os.str();
  return {s.begin(), s.end()};
}

Tensor decode(const std::vector<unsigned char>& bytes) {
  std::istringstream is(std::string(bytes.begin(), bytes.end()), std::ios::binary);
  return read(is);
}

}  // namespace gradpaint::gpt1
