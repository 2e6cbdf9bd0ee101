#include "bags/optim.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace bags {

void AdamState::remap_rows(std::span<const long> source, std::size_t row_width) {
  std::vector<Real> nm(source.size() * row_width, Real(0));
  std::vector<Real> nv(source.size() * row_width, Real(0));
  for (std::size_t j = 0; j < source.size(); ++j) {
    if (source[j] < 0) continue;
    const std::size_t src = static_cast<std::size_t>(source[j]) * row_width;
    std::copy_n(m.begin() + src, row_width, nm.begin() + j * row_width);
    std::copy_n(v.begin() + src, row_width, nv.begin() + j * row_width);
  }
  m = std::move(nm);
  v = std::move(nv);
}

void adam_step(std::span<Real> params, std::span<const Real> grads, AdamState& state,
               const AdamConfig& config) {
  if (grads.size() != params.size()) {
    throw std::invalid_argument("adam_step: gradient size does not match parameters");
  }
  if (state.m.size() != params.size()) state.resize(params.size());
  ++state.step;
  const Real t = Real(state.step);
  const Real c1 = Real(1) - std::pow(config.beta1, t);
  const Real c2 = Real(1) - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Real g = grads[i];
    state.m[i] = config.beta1 * state.m[i] + (Real(1) - config.beta1) * g;
    state.v[i] = config.beta2 * state.v[i] + (Real(1) - config.beta2) * g * g;
    const Real mhat = state.m[i] / c1;
    const Real vhat = state.v[i] / c2;
    params[i] -= config.lr * mhat / (std::sqrt(vhat) + config.eps);
  }
}

Real exponential_lr(Real lr_init, Real lr_final, std::size_t step, std::size_t max_steps) {
  if (max_steps == 0) return lr_final;
  const Real t = std::clamp(Real(step) / Real(max_steps), Real(0), Real(1));
  return std::exp(std::log(lr_init) * (Real(1) - t) + std::log(lr_final) * t);
}

}  // namespace bags
