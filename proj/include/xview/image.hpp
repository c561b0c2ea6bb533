#pragma once

#include <cctype>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "xview/error.hpp"
#include "xview/tensor.hpp"

namespace xview {

// Single-channel image with pixels in [0, 1].
struct GrayImage {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<double> pixels;

  GrayImage() = default;
  GrayImage(std::size_t h, std::size_t w, double fill = 0.0) : height(h), width(w), pixels(h * w, fill) {}

  double& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  double at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
};

// Binary edge map, same dimensions as its source image.
struct EdgeMap {
  std::size_t height = 0;
  std::size_t width = 0;
  std::vector<std::uint8_t> pixels;

  EdgeMap() = default;
  EdgeMap(std::size_t h, std::size_t w) : height(h), width(w), pixels(h * w, 0) {}

  std::uint8_t& at(std::size_t y, std::size_t x) { return pixels[y * width + x]; }
  std::uint8_t at(std::size_t y, std::size_t x) const { return pixels[y * width + x]; }
  std::size_t count() const {
    std::size_t n = 0;
    for (auto p : pixels) n += p;
    return n;
  }
  friend bool operator==(const EdgeMap&, const EdgeMap&) = default;
};

// 8-bit quantization used for every image that goes through a file, applied
// in memory too so both paths see the same values.
inline double quantize8(double v) {
  const double c = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return std::round(c * 255.0) / 255.0;
}

inline std::uint8_t to_byte(double v) { return static_cast<std::uint8_t>(std::lround(quantize8(v) * 255.0)); }

namespace detail {

inline std::string next_token(std::istream& in) {
  std::string tok;
  char c;
  while (in.get(c)) {
    if (c == '#') {
      std::string skip;
      std::getline(in, skip);
      continue;
    }
    if (std::isspace(static_cast<unsigned char>(c))) {
      if (!tok.empty()) break;
      continue;
    }
    tok.push_back(c);
  }
  return tok;
}

struct Pnm {
  int channels = 0;
  std::size_t height = 0, width = 0;
  std::vector<std::uint8_t> bytes;  // interleaved
};

inline Pnm read_pnm(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open image '" + path + "'");
  Pnm img;
  const std::string magic = next_token(in);
  if (magic == "P5")
    img.channels = 1;
  else if (magic == "P6")
    img.channels = 3;
  else
    throw DataError("'" + path + "' is not a binary PGM/PPM file");
  try {
    img.width = std::stoul(next_token(in));
    img.height = std::stoul(next_token(in));
    const unsigned long maxval = std::stoul(next_token(in));
    if (maxval != 255) throw DataError("'" + path + "': only 8-bit images (maxval 255) are supported");
  } catch (const std::logic_error&) {
    throw DataError("'" + path + "': malformed header");
  }
  if (img.width == 0 || img.height == 0) throw DataError("'" + path + "': empty image");
  img.bytes.resize(img.width * img.height * static_cast<std::size_t>(img.channels));
  in.read(reinterpret_cast<char*>(img.bytes.data()), static_cast<std::streamsize>(img.bytes.size()));
  if (static_cast<std::size_t>(in.gcount()) != img.bytes.size()) {
    throw DataError("'" + path + "': truncated pixel data");
  }
  return img;
}

inline void write_pnm(const std::string& path, int channels, std::size_t h, std::size_t w,
                      const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError("cannot write image '" + path + "'");
  out << (channels == 1 ? "P5" : "P6") << '\n' << w << ' ' << h << "\n255\n";
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DataError("failed writing image '" + path + "'");
}

}  // namespace detail

// Reads a P6 (or P5, replicated to three channels) file as 3 x H x W in [0, 1].
inline Tensor read_rgb(const std::string& path) {
  const auto p = detail::read_pnm(path);
  Tensor t({3, p.height, p.width});
  const std::size_t hw = p.height * p.width;
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c) {
      const std::uint8_t b = p.channels == 3 ? p.bytes[i * 3 + c] : p.bytes[i];
      t[c * hw + i] = b / 255.0;
    }
  return t;
}

inline void write_rgb(const std::string& path, const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) throw DimensionError("write_rgb expects 3 x H x W, got " + shape_str(rgb.shape()));
  const std::size_t h = rgb.dim(1), w = rgb.dim(2), hw = h * w;
  std::vector<std::uint8_t> bytes(hw * 3);
  for (std::size_t i = 0; i < hw; ++i)
    for (std::size_t c = 0; c < 3; ++c) bytes[i * 3 + c] = to_byte(rgb[c * hw + i]);
  detail::write_pnm(path, 3, h, w, bytes);
}

inline GrayImage read_gray(const std::string& path) {
  const auto p = detail::read_pnm(path);
  if (p.channels != 1) throw DataError("'" + path + "' is not a grayscale (P5) image");
  GrayImage g(p.height, p.width);
  for (std::size_t i = 0; i < g.pixels.size(); ++i) g.pixels[i] = p.bytes[i] / 255.0;
  return g;
}

inline void write_gray(const std::string& path, const GrayImage& img) {
  std::vector<std::uint8_t> bytes(img.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = to_byte(img.pixels[i]);
  detail::write_pnm(path, 1, img.height, img.width, bytes);
}

// Edge maps are stored as P5 with 0 / 255.
inline void write_edges(const std::string& path, const EdgeMap& e) {
  std::vector<std::uint8_t> bytes(e.pixels.size());
  for (std::size_t i = 0; i < bytes.size(); ++i) bytes[i] = e.pixels[i] ? 255 : 0;
  detail::write_pnm(path, 1, e.height, e.width, bytes);
}

inline EdgeMap read_edges(const std::string& path) {
  const auto p = detail::read_pnm(path);
  if (p.channels != 1) throw DataError("'" + path + "' is not a P5 edge map");
  EdgeMap e(p.height, p.width);
  for (std::size_t i = 0; i < e.pixels.size(); ++i) e.pixels[i] = p.bytes[i] >= 128 ? 1 : 0;
  return e;
}

}  // namespace xview
