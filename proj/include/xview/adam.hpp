#pragma once

#include <cmath>
#include <string>

#include "xview/error.hpp"
#include "xview/tape.hpp"

namespace xview {

struct AdamConfig {
  double lr = 1e-5;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One bias-corrected Adam update over every parameter of the store. Gradients
// are left in place; the caller zeroes them.
inline void adam_step(ParamStore& store, const AdamConfig& cfg) {
  if (!(cfg.lr > 0.0)) throw ParameterError("adam: lr must be positive, got " + std::to_string(cfg.lr));
  store.increment_step();
  const double t = static_cast<double>(store.step_count());
  const double c1 = 1.0 - std::pow(cfg.beta1, t);
  const double c2 = 1.0 - std::pow(cfg.beta2, t);
  for (auto& [_, p] : store) {
    for (std::size_t i = 0; i < p.value.size(); ++i) {
      const double g = p.grad[i];
      p.adam_m[i] = cfg.beta1 * p.adam_m[i] + (1.0 - cfg.beta1) * g;
      p.adam_v[i] = cfg.beta2 * p.adam_v[i] + (1.0 - cfg.beta2) * g * g;
      const double m_hat = p.adam_m[i] / c1;
      const double v_hat = p.adam_v[i] / c2;
      p.value[i] -= cfg.lr * m_hat / (std::sqrt(v_hat) + cfg.eps);
    }
  }
}

}  // namespace xview
