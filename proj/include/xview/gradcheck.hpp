#pragma once

#include <algorithm>
#include <bit>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "xview/error.hpp"
#include "xview/tape.hpp"

namespace xview {

// Builds a scalar loss on a fresh tape from the current parameter values.
using Fragment = std::function<Var(Tape&)>;

struct GradCheckResult {
  double max_rel_error = 0.0;
  std::string worst_parameter;
  std::size_t worst_index = 0;
  std::size_t checked = 0;
};

// Compares reverse-mode gradients against central differences over every
// entry of every parameter in `stores` (shared stores may repeat; they are
// visited once). Error per entry is |a - cd| / max(|a|, |cd|, 1e-8).
inline GradCheckResult finite_diff_check(const std::vector<ParamStore*>& stores, const Fragment& fragment,
                                         double eps = 1e-5) {
  std::vector<ParamStore*> unique;
  for (ParamStore* s : stores)
    if (std::find(unique.begin(), unique.end(), s) == unique.end()) unique.push_back(s);

  auto evaluate = [&]() {
    Tape tape;
    return tape.value(fragment(tape)).item();
  };

  for (ParamStore* s : unique) s->zero_grad();
  double base = 0.0;
  {
    Tape tape;
    Var loss = fragment(tape);
    base = tape.value(loss).item();
    tape.backward(loss);
  }
  const double again = evaluate();
  if (std::bit_cast<std::uint64_t>(again) != std::bit_cast<std::uint64_t>(base)) {
    throw ContractError("finite_diff_check: fragment is not deterministic (dropout mask not fixed?)");
  }

  GradCheckResult result;
  for (ParamStore* s : unique) {
    for (auto& [name, p] : *s) {
      for (std::size_t i = 0; i < p.value.size(); ++i) {
        const double original = p.value[i];
        p.value[i] = original + eps;
        const double plus = evaluate();
        p.value[i] = original - eps;
        const double minus = evaluate();
        p.value[i] = original;
        const double cd = (plus - minus) / (2.0 * eps);
        const double analytic = p.grad[i];
        const double denom = std::max({std::abs(analytic), std::abs(cd), 1e-8});
        const double err = std::abs(analytic - cd) / denom;
        ++result.checked;
        if (err > result.max_rel_error) {
          result.max_rel_error = err;
          result.worst_parameter = name;
          result.worst_index = i;
        }
      }
    }
  }
  return result;
}

}  // namespace xview
