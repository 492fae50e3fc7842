#include "gradpaint/image_io.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <stdexcept>

namespace gradpaint {

namespace {

[[noreturn]] void malformed_at(std::streamoff pos, const std::string& what) {
  throw std::runtime_error("PNM: " + what + " at byte " + std::to_string(static_cast<long long>(pos)));
}

[[noreturn]] void malformed(std::istream& is, const std::string& what) {
  is.clear();
  malformed_at(is.tellg(), what);
}

void skip_space_and_comments(std::istream& is) {
  for (;;) {
    const int c = is.peek();
    if (c == '#') {
      std::string line;
      std::getline(is, line);
    } else if (c != std::char_traits<char>::eof() && std::isspace(c)) {
      is.get();
    } else {
      return;
    }
  }
}

std::size_t read_header_number(std::istream& is, const char* field) {
  skip_space_and_comments(is);
  if (!std::isdigit(is.peek())) malformed(is, std::string("expected ") + field);
  std::size_t v = 0;
  while (std::isdigit(is.peek())) {
    v = v * 10 + static_cast<std::size_t>(is.get() - '0');
    if (v > 1u << 24) malformed(is, std::string(field) + " too large");
  }
  return v;
}

}  // namespace

ByteImage read_pnm_bytes(std::istream& is) {
  const std::streamoff start = is.tellg();
  char magic[2] = {0, 0};
  if (!is.read(magic, 2) || magic[0] != 'P' || (magic[1] != '5' && magic[1] != '6')) {
    malformed_at(std::max<std::streamoff>(start, 0), "expected P5 or P6 magic");
  }
  ByteImage img;
  img.channels = magic[1] == '5' ? 1 : 3;
  img.width = read_header_number(is, "width");
  img.height = read_header_number(is, "height");
  const std::size_t maxval = read_header_number(is, "maxval");
  if (img.width == 0 || img.height == 0) malformed(is, "zero image dimension");
  if (maxval != 255) malformed(is, "unsupported maxval " + std::to_string(maxval));
  if (!std::isspace(is.get())) malformed(is, "expected whitespace after header");
  img.pixels.resize(img.height * img.width * img.channels);
  if (!is.read(img.pixels.data(), static_cast<std::streamsize>(img.pixels.size()))) {
    malformed(is, "truncated pixel data");
  }
  return img;
}

void write_pnm_bytes(std::ostream& os, const ByteImage& img) {
  if (img.channels != 1 && img.channels != 3) throw std::invalid_argument("PNM: channels must be 1 or 3");
  if (img.pixels.size() != img.height * img.width * img.channels) {
    throw std::invalid_argument("PNM: pixel buffer size does not match dimensions");
  }
  os << (img.channels == 1 ? "P5" : "P6") << '\n' << img.width << ' ' << img.height << "\n255\n";
  os.write(img.pixels.data(), static_cast<std::streamsize>(img.pixels.size()));
  if (!os) throw std::runtime_error("PNM: write failed");
}

Tensor read_pnm(std::istream& is) {
  const ByteImage img = read_pnm_bytes(is);
  std::vector<double> data(img.pixels.size());
  for (std::size_t i = 0; i < data.size(); ++i) {
    data[i] = 2.0 * static_cast<unsigned char>(img.pixels[i]) / 255.0 - 1.0;
  }
  return Tensor({img.height, img.width, img.channels}, std::move(data));
}

void write_pnm(std::ostream& os, const Tensor& image) {
  const Shape& s = image.shape();
  if (s.size() != 3 || (s[2] != 1 && s[2] != 3)) {
    throw std::invalid_argument("PNM: expected (H, W, 1) or (H, W, 3), got " + shape_str(s));
  }
  ByteImage img{s[0], s[1], s[2], std::string(image.size(), '\0')};
  for (std::size_t i = 0; i < image.size(); ++i) {
    const double v = std::round((image[i] + 1.0) / 2.0 * 255.0);
    img.pixels[i] = static_cast<char>(static_cast<unsigned char>(std::clamp(v, 0.0, 255.0)));
  }
  write_pnm_bytes(os, img);
}

Tensor load_pnm(const std::filesystem::path& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw std::runtime_error("cannot open image " + path.string());
  try {
    return read_pnm(is);
  } catch (const std::runtime_error& e) {
    throw std::runtime_error(path.string() + ": " + e.what());
  }
}

void save_pnm(const std::filesystem::path& path, const Tensor& image) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw std::runtime_error("cannot write image " + path.string());
  write_pnm(os, image);
}

}  // namespace gradpaint
