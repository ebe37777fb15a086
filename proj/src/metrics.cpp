#include "sepprune/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "sepprune/error.hpp"

namespace sepprune {

namespace {

double mean_of(std::span<const double> x) {
  double s = 0;
  for (double v : x) s += v;
  return s / static_cast<double>(x.size());
}

void check_pair(std::span<const double> reference, std::span<const double> estimate) {
  if (reference.size() != estimate.size() || reference.empty())
    throw InvalidArgumentError("metrics: reference/estimate length mismatch");
  bool all_zero = true;
  for (double v : reference)
    if (v != 0.0) {
      all_zero = false;
      break;
    }
  if (all_zero) throw InvalidArgumentError("metrics: reference is identically zero");
}

}  // namespace

double si_sdr_db(std::span<const double> reference, std::span<const double> estimate) {
  check_pair(reference, estimate);
  const double mr = mean_of(reference), me = mean_of(estimate);
  double ss = 0, se = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double r = reference[i] - mr;
    const double e = estimate[i] - me;
    ss += r * r;
    se += e * e;
  }
  // Rescale the estimate to the reference norm first. The metric is scale
  // invariant, and pinning the scale keeps the delta stabilizer from leaking
  // a scale dependence into the dB value.
  const double scale = std::sqrt((ss + kMetricDelta) / (se + kMetricDelta));
  double dot = 0;
  for (std::size_t i = 0; i < reference.size(); ++i)
    dot += scale * (estimate[i] - me) * (reference[i] - mr);
  const double alpha = dot / (ss + kMetricDelta);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double t = alpha * (reference[i] - mr);
    const double d = t - scale * (estimate[i] - me);
    num += t * t;
    den += d * d;
  }
  return 10.0 * std::log10((num + kMetricDelta) / (den + kMetricDelta));
}

double sdr_db(std::span<const double> reference, std::span<const double> estimate) {
  check_pair(reference, estimate);
  const double mr = mean_of(reference), me = mean_of(estimate);
  double num = 0, den = 0;
  for (std::size_t i = 0; i < reference.size(); ++i) {
    const double r = reference[i] - mr;
    const double d = r - (estimate[i] - me);
    num += r * r;
    den += d * d;
  }
  return 10.0 * std::log10((num + kMetricDelta) / (den + kMetricDelta));
}

UtteranceImprovement separation_improvement(
    std::span<const double> mixture,
    const std::vector<std::vector<double>>& references,
    const std::vector<std::vector<double>>& estimates) {
  if (references.size() != estimates.size() || references.empty())
    throw InvalidArgumentError("separation_improvement: speaker count mismatch");
  const int C = static_cast<int>(references.size());
  std::vector<int> perm(C), best_perm;
  std::iota(perm.begin(), perm.end(), 0);
  double best = 0;
  do {
    double m = 0;
    for (int c = 0; c < C; ++c) m += si_sdr_db(references[perm[c]], estimates[c]);
    m /= C;
    if (best_perm.empty() || m > best) {
      best = m;
      best_perm = perm;
    }
  } while (std::next_permutation(perm.begin(), perm.end()));

  UtteranceImprovement out;
  out.permutation = best_perm;
  for (int c = 0; c < C; ++c) {
    const auto& ref = references[best_perm[c]];
    out.si_sdr_i += si_sdr_db(ref, estimates[c]) - si_sdr_db(ref, mixture);
    out.sdr_i += sdr_db(ref, estimates[c]) - sdr_db(ref, mixture);
  }
  out.si_sdr_i /= C;
  out.sdr_i /= C;
  return out;
}

}  // namespace sepprune
