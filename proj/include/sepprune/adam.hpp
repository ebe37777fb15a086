#pragma once

#include <cmath>
#include <span>
#include <vector>

#include "sepprune/error.hpp"

namespace sepprune {

// Adam with bias correction. One state instance serves a fixed list of
// parameter tensors; the step counter is shared and advances once per
// adam_step call.
template <class T>
struct AdamState {
  struct Slot {
    std::vector<T> m, v;
  };
  std::vector<Slot> slots;
  long step = 0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;

  void init(const std::vector<std::size_t>& sizes) {
    slots.clear();
    slots.reserve(sizes.size());
    for (std::size_t n : sizes)
      slots.push_back(Slot{std::vector<T>(n, T(0)), std::vector<T>(n, T(0))});
    step = 0;
  }
};

template <class T>
void adam_step(std::vector<std::span<T>> params,
               std::vector<std::span<const T>> grads, AdamState<T>& state,
               double lr) {
  if (lr <= 0) throw InvalidArgumentError("adam_step: lr must be > 0");
  if (params.size() != grads.size() || params.size() != state.slots.size())
    throw InvalidArgumentError("adam_step: parameter/gradient/state count mismatch");
  state.step += 1;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i];
    auto g = grads[i];
    auto& slot = state.slots[i];
    if (p.size() != g.size() || p.size() != slot.m.size())
      throw InvalidArgumentError("adam_step: shape mismatch at parameter " +
                                 std::to_string(i));
    const T b1 = static_cast<T>(state.beta1), b2 = static_cast<T>(state.beta2);
    for (std::size_t j = 0; j < p.size(); ++j) {
      slot.m[j] = b1 * slot.m[j] + (T(1) - b1) * g[j];
      slot.v[j] = b2 * slot.v[j] + (T(1) - b2) * g[j] * g[j];
      const double mhat = static_cast<double>(slot.m[j]) / bc1;
      const double vhat = static_cast<double>(slot.v[j]) / bc2;
      p[j] -= static_cast<T>(lr * mhat / (std::sqrt(vhat) + state.eps));
    }
  }
}

}  // namespace sepprune
