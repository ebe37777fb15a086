#pragma once

#include <span>
#include <vector>

namespace sepprune {

// Stabilizer used in every metric ratio; caps perfect estimates near +80 dB
// instead of producing infinities.
inline constexpr double kMetricDelta = 1e-8;

// Scale-invariant SDR in dB. Both signals are zero-meaned first;
// alpha = <est,ref>/(<ref,ref>+delta), value = 10*log10((|a*ref|^2+delta) /
// (|a*ref-est|^2+delta)). Throws InvalidArgumentError on an identically-zero
// reference.
double si_sdr_db(std::span<const double> reference,
                 std::span<const double> estimate);

// Plain (non-scale-invariant) SDR in dB, same zero-mean and delta convention.
double sdr_db(std::span<const double> reference,
              std::span<const double> estimate);

struct UtteranceImprovement {
  double sdr_i = 0.0;
  double si_sdr_i = 0.0;
  std::vector<int> permutation;  // references[perm[c]] pairs with estimates[c]
};

// SDRi / SI-SDRi for one utterance: metric(ref, est) - metric(ref, mixture),
// under the speaker permutation that maximizes mean SI-SDR. The same
// permutation is applied to both metrics.
UtteranceImprovement separation_improvement(
    std::span<const double> mixture,
    const std::vector<std::vector<double>>& references,
    const std::vector<std::vector<double>>& estimates);

}  // namespace sepprune
