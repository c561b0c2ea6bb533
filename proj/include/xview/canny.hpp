#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

#include "xview/error.hpp"
#include "xview/image.hpp"

namespace xview {

struct CannyParams {
  double sigma = 1.4;
  double low = 0.1;   // fraction of the max gradient magnitude
  double high = 0.3;  // fraction of the max gradient magnitude
};

// Intermediate products, exposed for tests and inspection.
struct CannyStages {
  GrayImage blurred;
  GrayImage gx, gy, magnitude;
  EdgeMap thinned;    // survivors of non-maximum suppression (interior only)
  EdgeMap candidate;  // thinned and above the low threshold
  EdgeMap strong;     // thinned and above the high threshold
  EdgeMap edges;      // strong plus candidates 8-connected to them
  double max_magnitude = 0.0;
};

// The 5x5 blur reaches 2 px and the Sobel window 1 px further, so pixels
// closer than this to the border are never edges.
inline constexpr std::size_t kCannyBorder = 3;

namespace detail {

inline std::size_t clamp_index(std::ptrdiff_t i, std::size_t n) {
  if (i < 0) return 0;
  if (i >= static_cast<std::ptrdiff_t>(n)) return n - 1;
  return static_cast<std::size_t>(i);
}

inline GrayImage gaussian_blur5(const GrayImage& img, double sigma) {
  double k[5];
  double total = 0.0;
  for (int i = -2; i <= 2; ++i) total += k[i + 2] = std::exp(-(i * i) / (2.0 * sigma * sigma));
  for (double& v : k) v /= total;
  const std::size_t H = img.height, W = img.width;
  GrayImage tmp(H, W), out(H, W);
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int i = -2; i <= 2; ++i) acc += k[i + 2] * img.at(y, clamp_index(static_cast<std::ptrdiff_t>(x) + i, W));
      tmp.at(y, x) = acc;
    }
  for (std::size_t y = 0; y < H; ++y)
    for (std::size_t x = 0; x < W; ++x) {
      double acc = 0.0;
      for (int i = -2; i <= 2; ++i) acc += k[i + 2] * tmp.at(clamp_index(static_cast<std::ptrdiff_t>(y) + i, H), x);
      out.at(y, x) = acc;
    }
  return out;
}

}  // namespace detail

inline CannyStages canny_stages(const GrayImage& img, const CannyParams& p = {}) {
  if (img.height < 5 || img.width < 5) {
    throw DimensionError("canny: image " + std::to_string(img.height) + "x" + std::to_string(img.width) +
                         " is smaller than the 5x5 blur kernel");
  }
  if (!(p.low > 0.0 && p.low < p.high && p.high <= 1.0)) {
    throw ParameterError("canny: thresholds must satisfy 0 < low < high <= 1");
  }
  if (!(p.sigma > 0.0)) throw ParameterError("canny: sigma must be positive");
  const std::size_t H = img.height, W = img.width;
  CannyStages s;
  s.blurred = detail::gaussian_blur5(img, p.sigma);
  s.gx = GrayImage(H, W);
  s.gy = GrayImage(H, W);
  s.magnitude = GrayImage(H, W);
  const GrayImage& b = s.blurred;
  auto px = [&](std::ptrdiff_t y, std::ptrdiff_t x) { return b.at(detail::clamp_index(y, H), detail::clamp_index(x, W)); };
  for (std::size_t yy = 0; yy < H; ++yy)
    for (std::size_t xx = 0; xx < W; ++xx) {
      const auto y = static_cast<std::ptrdiff_t>(yy), x = static_cast<std::ptrdiff_t>(xx);
      const double gx = (px(y - 1, x + 1) + 2 * px(y, x + 1) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y, x - 1) + px(y + 1, x - 1));
      const double gy = (px(y + 1, x - 1) + 2 * px(y + 1, x) + px(y + 1, x + 1)) -
                        (px(y - 1, x - 1) + 2 * px(y - 1, x) + px(y - 1, x + 1));
      s.gx.at(yy, xx) = gx;
      s.gy.at(yy, xx) = gy;
      s.magnitude.at(yy, xx) = std::hypot(gx, gy);
    }

  s.thinned = EdgeMap(H, W);
  s.candidate = EdgeMap(H, W);
  s.strong = EdgeMap(H, W);
  s.edges = EdgeMap(H, W);
  const std::size_t B = kCannyBorder;
  if (H <= 2 * B || W <= 2 * B) return s;
  for (std::size_t y = B; y < H - B; ++y)
    for (std::size_t x = B; x < W - B; ++x) s.max_magnitude = std::max(s.max_magnitude, s.magnitude.at(y, x));
  if (s.max_magnitude <= 0.0) return s;

  // Direction sectors of 45 degrees. Along the gradient the pixel must beat
  // the "previous" neighbour strictly and the "next" one at least equally, so
  // a plateau two pixels wide keeps exactly one of them. Comparisons carry a
  // tolerance: a symmetric ridge can come out of the blur a few ulps lopsided,
  // and that must not decide which side of the plateau survives.
  const double tol = 1e-9 * s.max_magnitude;
  auto beats = [tol](double v, double other) { return v > other + tol; };
  auto matches = [tol](double v, double other) { return v >= other - tol; };
  const double tan22 = std::tan(std::numbers::pi / 8.0);
  const double tan67 = std::tan(3.0 * std::numbers::pi / 8.0);
  const GrayImage& m = s.magnitude;
  for (std::size_t y = B; y < H - B; ++y)
    for (std::size_t x = B; x < W - B; ++x) {
      const double v = m.at(y, x);
      if (v <= 0.0) continue;
      const double ax = std::abs(s.gx.at(y, x)), ay = std::abs(s.gy.at(y, x));
      bool keep;
      if (ay <= tan22 * ax) {
        keep = beats(v, m.at(y, x - 1)) && matches(v, m.at(y, x + 1));
      } else if (ay > tan67 * ax) {
        keep = beats(v, m.at(y - 1, x)) && matches(v, m.at(y + 1, x));
      } else if ((s.gx.at(y, x) > 0) == (s.gy.at(y, x) > 0)) {
        keep = beats(v, m.at(y - 1, x - 1)) && beats(v, m.at(y + 1, x + 1));
      } else {
        keep = beats(v, m.at(y - 1, x + 1)) && beats(v, m.at(y + 1, x - 1));
      }
      if (!keep) continue;
      s.thinned.at(y, x) = 1;
      if (v > p.low * s.max_magnitude) s.candidate.at(y, x) = 1;
      if (v > p.high * s.max_magnitude) s.strong.at(y, x) = 1;
    }

  // Hysteresis: flood from strong pixels through 8-connected candidates.
  std::vector<std::size_t> stack;
  for (std::size_t i = 0; i < H * W; ++i)
    if (s.strong.pixels[i]) {
      s.edges.pixels[i] = 1;
      stack.push_back(i);
    }
  while (!stack.empty()) {
    const std::size_t i = stack.back();
    stack.pop_back();
    const std::size_t y = i / W, x = i % W;
    for (int dy = -1; dy <= 1; ++dy)
      for (int dx = -1; dx <= 1; ++dx) {
        const std::size_t ny = y + dy, nx = x + dx;  // interior pixels never wrap
        const std::size_t j = ny * W + nx;
        if (s.candidate.pixels[j] && !s.edges.pixels[j]) {
          s.edges.pixels[j] = 1;
          stack.push_back(j);
        }
      }
  }
  return s;
}

inline EdgeMap canny(const GrayImage& img, const CannyParams& p = {}) { return canny_stages(img, p).edges; }

}  // namespace xview
