#pragma once

#include "bags/tensor.hpp"

#include <cstddef>
#include <span>
#include <vector>

namespace bags {

struct AdamConfig {
  Real lr = Real(1e-3);
  Real beta1 = Real(0.9);
  Real beta2 = Real(0.999);
  Real eps = Real(1e-15);
};

/// First and second moments of one parameter tensor plus its step count.
struct AdamState {
  std::vector<Real> m;
  std::vector<Real> v;
  std::size_t step = 0;

  void resize(std::size_t n) {
    m.assign(n, Real(0));
    v.assign(n, Real(0));
  }

  /// Rebuilds the moments for a parameter whose rows were reordered,
  /// duplicated or dropped. `source[j]` names the old row feeding new row j,
  /// or -1 for a fresh row, which starts with zero moments.
  void remap_rows(std::span<const long> source, std::size_t row_width);
};

/// One bias-corrected Adam update of `params` in place.
void adam_step(std::span<Real> params, std::span<const Real> grads, AdamState& state,
               const AdamConfig& config);

/// Exponential (log-linear) interpolation from `lr_init` to `lr_final` over
/// `max_steps`, the usual splatting position schedule.
Real exponential_lr(Real lr_init, Real lr_final, std::size_t step, std::size_t max_steps);

}  // namespace bags
