#pragma once

#include <cmath>
#include <cstdint>
#include <string>

#include "xview/error.hpp"
#include "xview/rng.hpp"
#include "xview/tensor.hpp"

namespace xview {

enum class InitKind { xavier_uniform, gaussian, uniform_with_std, zeros };

struct InitSpec {
  InitKind kind = InitKind::xavier_uniform;
  double mean = 0.0;  // gaussian only
  double std = 0.0;   // gaussian and uniform_with_std
  std::uint64_t seed = 0;

  static InitSpec xavier(std::uint64_t seed) { return {InitKind::xavier_uniform, 0.0, 0.0, seed}; }
  static InitSpec gaussian_with(double mean, double std, std::uint64_t seed) {
    return {InitKind::gaussian, mean, std, seed};
  }
  static InitSpec uniform_std(double std, std::uint64_t seed) {
    return {InitKind::uniform_with_std, 0.0, std, seed};
  }
  static InitSpec zero() { return {InitKind::zeros, 0.0, 0.0, 0}; }
};

// Fan-in / fan-out for the layouts used here: linear weights are Din x Dout,
// conv kernels are K x C x kh x kw.
inline std::pair<double, double> fans(const Shape& shape) {
  if (shape.size() == 2) return {static_cast<double>(shape[0]), static_cast<double>(shape[1])};
  if (shape.size() == 4) {
    const double receptive = static_cast<double>(shape[2] * shape[3]);
    return {static_cast<double>(shape[1]) * receptive, static_cast<double>(shape[0]) * receptive};
  }
  const double n = static_cast<double>(shape_numel(shape));
  return {n, n};
}

// Draws a tensor. The stream is keyed by (spec.seed, tag) so each named
// parameter gets the same values regardless of what else is initialized.
inline Tensor initialize(const Shape& shape, const InitSpec& spec, const std::string& tag) {
  Tensor t(shape);
  CounterRng rng(derive_seed(spec.seed, tag));
  switch (spec.kind) {
    case InitKind::zeros:
      break;
    case InitKind::xavier_uniform: {
      const auto [fan_in, fan_out] = fans(shape);
      const double bound = std::sqrt(6.0 / (fan_in + fan_out));
      for (double& v : t.data()) v = rng.uniform(-bound, bound);
      break;
    }
    case InitKind::gaussian:
      if (spec.std < 0.0) throw ParameterError("gaussian init: std must be non-negative");
      for (double& v : t.data()) v = rng.normal(spec.mean, spec.std);
      break;
    case InitKind::uniform_with_std: {
      if (spec.std < 0.0) throw ParameterError("uniform init: std must be non-negative");
      // Zero-mean uniform on [-a, a] has std a / sqrt(3).
      const double bound = spec.std * std::sqrt(3.0);
      for (double& v : t.data()) v = rng.uniform(-bound, bound);
      break;
    }
  }
  return t;
}

}  // namespace xview
