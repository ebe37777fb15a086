#pragma once

// Permutation-invariant training loss on the tape, built entirely from
// primitive ops so the whole thing is covered by the finite-difference
// gradient suite. Divisions are expressed as exp(-log(d)) on strictly
// positive denominators.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "sepprune/metrics.hpp"
#include "sepprune/ops.hpp"

namespace sepprune {

// SI-SDR of one (reference, estimate) pair as a scalar node, in dB.
template <class T>
Tensor<T> si_sdr_node(Tensor<T> reference, Tensor<T> estimate) {
  Tape<T>& tape = detail::same_tape(reference, estimate);
  detail::require(reference.shape() == estimate.shape() && reference.shape().size() == 1,
                  "si_sdr_node: expects matching [T] vectors");
  bool all_zero = true;
  for (T v : reference.values())
    if (v != T(0)) {
      all_zero = false;
      break;
    }
  if (all_zero) throw InvalidArgumentError("si_sdr: reference is identically zero");

  auto ref0 = sub(reference, mean(reference));
  auto est_raw = sub(estimate, mean(estimate));
  auto delta = tape.scalar(static_cast<T>(kMetricDelta));
  auto ss = add(sum(square(ref0)), delta);
  auto se = add(sum(square(est_raw)), delta);
  // Pin the estimate's scale to the reference norm (see si_sdr_db).
  auto scale = sepprune::exp(scalar_mul(sub(sepprune::log(ss), sepprune::log(se)), 0.5));
  auto est0 = mul(est_raw, scale);
  auto dot = sum(mul(est0, ref0));
  auto alpha = mul(dot, sepprune::exp(scalar_mul(sepprune::log(ss), -1.0)));
  auto target = mul(ref0, alpha);
  auto err = sub(target, est0);
  auto num = add(sum(square(target)), delta);
  auto den = add(sum(square(err)), delta);
  return scalar_mul(sub(sepprune::log(num), sepprune::log(den)), 10.0 / std::log(10.0));
}

// Negative SI-SDR under the best speaker permutation, meaned over the batch.
// references [B,C,L] (typically constant), estimates [B,C,L] (differentiable).
// Exhaustive permutations, so C must stay small.
template <class T>
Tensor<T> pit_neg_sisdr_loss(Tensor<T> references, Tensor<T> estimates) {
  detail::same_tape(references, estimates);
  detail::require(references.shape() == estimates.shape() &&
                      references.shape().size() == 3,
                  "pit_neg_sisdr_loss: expects matching [B,C,T] tensors");
  const int B = references.shape()[0], C = references.shape()[1];
  detail::require(C >= 1 && C <= 4, "pit_neg_sisdr_loss: C must be in [1,4]");

  Tensor<T> acc;
  for (int b = 0; b < B; ++b) {
    std::vector<Tensor<T>> ref_rows, est_rows;
    for (int c = 0; c < C; ++c) {
      ref_rows.push_back(row(references, b, c));
      est_rows.push_back(row(estimates, b, c));
    }
    std::vector<int> perm(C);
    std::iota(perm.begin(), perm.end(), 0);
    Tensor<T> best;
    T best_val = 0;
    do {
      Tensor<T> m;
      for (int c = 0; c < C; ++c) {
        auto v = si_sdr_node(ref_rows[perm[c]], est_rows[c]);
        m = c == 0 ? v : add(m, v);
      }
      m = scalar_mul(m, 1.0 / C);
      if (!best.valid() || m.item() > best_val) {
        best = m;
        best_val = m.item();
      }
    } while (std::next_permutation(perm.begin(), perm.end()));
    acc = b == 0 ? best : add(acc, best);
  }
  return scalar_mul(acc, -1.0 / B);
}

}  // namespace sepprune
