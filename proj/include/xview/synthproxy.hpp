#pragma once

#include <cstdint>
#include <set>
#include <string>
#include <vector>

#include "xview/canny.hpp"
#include "xview/error.hpp"
#include "xview/image.hpp"
#include "xview/rng.hpp"
#include "xview/tensor.hpp"

namespace xview {

inline void require_image(const Tensor& t, std::size_t channels, const char* what) {
  if (t.rank() != 3 || t.dim(0) != channels) {
    throw DimensionError(std::string(what) + ": expected " + std::to_string(channels) + " x H x W, got " +
                         shape_str(t.shape()));
  }
}

inline GrayImage to_grayscale(const Tensor& rgb) {
  require_image(rgb, 3, "to_grayscale");
  const std::size_t h = rgb.dim(1), w = rgb.dim(2), hw = h * w;
  GrayImage g(h, w);
  for (std::size_t i = 0; i < hw; ++i) {
    const double r = rgb[i], gr = rgb[hw + i], b = rgb[2 * hw + i];
    if (!(r >= 0.0 && r <= 1.0 && gr >= 0.0 && gr <= 1.0 && b >= 0.0 && b <= 1.0)) {
      throw DataError("to_grayscale: pixel " + std::to_string(i) + " is outside [0, 1]");
    }
    g.pixels[i] = 0.299 * r + 0.587 * gr + 0.114 * b;
  }
  return g;
}

// R, G, B, edge.
inline Tensor stack_4channel(const Tensor& rgb, const EdgeMap& edges) {
  require_image(rgb, 3, "stack_4channel");
  const std::size_t h = rgb.dim(1), w = rgb.dim(2), hw = h * w;
  if (edges.height != h || edges.width != w) {
    throw DimensionError("stack_4channel: image is " + std::to_string(h) + "x" + std::to_string(w) +
                         ", edge map is " + std::to_string(edges.height) + "x" + std::to_string(edges.width));
  }
  Tensor out({4, h, w});
  std::copy(rgb.data().begin(), rgb.data().end(), out.data().begin());
  for (std::size_t i = 0; i < hw; ++i) out[3 * hw + i] = edges.pixels[i] ? 1.0 : 0.0;
  return out;
}

inline Tensor with_edgemap(const Tensor& rgb, const CannyParams& params = {}) {
  return stack_4channel(rgb, canny(to_grayscale(rgb), params));
}

struct ProxyConfig {
  double fidelity = 1.0;   // rho
  double noise_std = 0.0;  // sigma_n
  std::set<std::size_t> complement_mask;
  std::uint64_t seed = 0;

  void validate() const {
    if (!(fidelity >= 0.0 && fidelity <= 1.0)) throw ParameterError("proxy: fidelity must lie in [0, 1]");
    if (!(noise_std >= 0.0)) throw ParameterError("proxy: noise_std must be non-negative");
  }
};

// Stand-in for a learned ground-to-aerial generator:
//   out = rho * aerial + (1 - rho) * N(0, sigma_n)
// with the masked channels overwritten by a fixed linear map of the ground
// image (nearest-neighbour resized to the aerial grid), then clipped to [0, 1].
// The noise stream is keyed by (cfg.seed, sample_key); the ground map only by
// cfg.seed, so every sample shares it.
inline Tensor proxy_synthesize(const Tensor& ground, const Tensor& aerial, const ProxyConfig& cfg,
                               std::uint64_t sample_key = 0) {
  cfg.validate();
  if (aerial.rank() != 3) throw DimensionError("proxy: aerial must be C x H x W, got " + shape_str(aerial.shape()));
  if (ground.rank() != 3) throw DimensionError("proxy: ground must be C x H x W, got " + shape_str(ground.shape()));
  const std::size_t C = aerial.dim(0), H = aerial.dim(1), W = aerial.dim(2), hw = H * W;
  for (std::size_t c : cfg.complement_mask)
    if (c >= C) throw ParameterError("proxy: complement channel " + std::to_string(c) + " out of range");

  Tensor out(aerial.shape());
  CounterRng noise(derive_seed(cfg.seed, sample_key));
  const double rho = cfg.fidelity;
  for (std::size_t i = 0; i < out.size(); ++i) {
    const double eta = cfg.noise_std > 0.0 ? noise.normal(0.0, cfg.noise_std) : 0.0;
    out[i] = rho * aerial[i] + (1.0 - rho) * eta;
  }

  if (!cfg.complement_mask.empty()) {
    const std::size_t Cg = ground.dim(0), Hg = ground.dim(1), Wg = ground.dim(2);
    CounterRng map_rng(derive_seed(cfg.seed, "complement-map"));
    for (std::size_t c : cfg.complement_mask) {
      // Non-negative mix over ground channels summing to 1 keeps [0, 1] range.
      std::vector<double> mix(Cg);
      double total = 0.0;
      for (double& m : mix) total += m = map_rng.uniform() + 1e-3;
      for (double& m : mix) m /= total;
      for (std::size_t y = 0; y < H; ++y) {
        const std::size_t gy = y * Hg / H;
        for (std::size_t x = 0; x < W; ++x) {
          const std::size_t gx = x * Wg / W;
          double v = 0.0;
          for (std::size_t k = 0; k < Cg; ++k) v += mix[k] * ground[(k * Hg + gy) * Wg + gx];
          out[c * hw + y * W + x] = v;
        }
      }
    }
  }
  for (double& v : out.data()) v = v < 0.0 ? 0.0 : (v > 1.0 ? 1.0 : v);
  return out;
}

}  // namespace xview
