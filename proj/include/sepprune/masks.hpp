#pragma once

// Differentiable channel-mask search: per-channel two-logit (keep/drop)
// Gumbel-Softmax relaxation, hard threshold with a gradient-clipped
// straight-through backward, plain gradient descent on the logits with the
// model weights frozen.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sepprune/data.hpp"
#include "sepprune/model.hpp"
#include "sepprune/ops.hpp"
#include "sepprune/rng.hpp"

namespace sepprune {

struct TauSchedule {
  double start = 1.0;
  double end = 1.0;
  double at(int iteration, int total_iterations) const {
    if (total_iterations <= 1) return end;
    const double f = static_cast<double>(iteration) / (total_iterations - 1);
    return start + (end - start) * f;
  }
};

struct GumbelChannelMask {
  std::string group_id;
  int channels = 0;
  // Learnable logits, one (keep, drop) pair per channel.
  std::vector<float> logit_keep, logit_drop;
  double epsilon = 0.7;
  // Caches from the latest sample (or from finalization).
  std::vector<float> pi;
  std::vector<std::uint8_t> m;
};

struct MaskSet {
  std::map<std::string, GumbelChannelMask> masks;  // keyed by group id
  double epsilon = 0.7;
  TauSchedule tau;
  std::uint64_t seed = 0;
};

// One mask per prunable dependency group, logits zeroed so the noise-free
// keep-probability starts at exactly 0.5 per channel.
MaskSet init_masks(const ModelGraph& model, double epsilon, double tau,
                   std::uint64_t seed);

// One relaxation draw for a whole group, on the tape. pi_j is the two-class
// softmax keep-probability computed in log-space:
// sigmoid((a_keep + g_keep - a_drop - g_drop) / tau).
template <class T>
struct SampledMask {
  Tensor<T> pi;
  Tensor<T> keep_logits, drop_logits;  // leaves, for gradient readout
  std::vector<double> gumbel_keep, gumbel_drop;
};

template <class T>
SampledMask<T> sample_soft(Tape<T>& tape, const GumbelChannelMask& mask, double tau,
                           Rng& rng, bool logits_require_grad = true,
                           bool noise_free = false) {
  if (tau <= 0) throw InvalidArgumentError("sample_soft: tau must be > 0");
  const int C = mask.channels;
  SampledMask<T> out;
  out.gumbel_keep.resize(C);
  out.gumbel_drop.resize(C);
  std::vector<T> gk(C), gd(C);
  for (int j = 0; j < C; ++j) {
    out.gumbel_keep[j] = noise_free ? 0.0 : rng.gumbel();
    out.gumbel_drop[j] = noise_free ? 0.0 : rng.gumbel();
    gk[j] = static_cast<T>(out.gumbel_keep[j]);
    gd[j] = static_cast<T>(out.gumbel_drop[j]);
  }
  out.keep_logits = tape.leaf({C}, std::vector<T>(mask.logit_keep.begin(), mask.logit_keep.end()),
                              logits_require_grad);
  out.drop_logits = tape.leaf({C}, std::vector<T>(mask.logit_drop.begin(), mask.logit_drop.end()),
                              logits_require_grad);
  auto keep_score = add(out.keep_logits, tape.leaf({C}, std::move(gk)));
  auto drop_score = add(out.drop_logits, tape.leaf({C}, std::move(gd)));
  out.pi = sigmoid(scalar_mul(sub(keep_score, drop_score), 1.0 / tau));
  return out;
}

struct MaskGrad {
  std::vector<float> keep, drop;
};

struct MaskStepOptions {
  double tau = 1.0;
  bool noise_free = false;
  // When set, backward runs and the logit gradients are written here.
  std::map<std::string, MaskGrad>* mask_grads = nullptr;
  // Joint-optimization arm: also differentiate the model weights.
  bool params_require_grad = false;
  std::map<std::string, std::vector<float>>* param_grads = nullptr;
};

// Forward with sampled-and-binarized masks applied at every grouped port,
// PIT negative SI-SDR loss against the batch references. Model weights are
// tape constants unless params_require_grad is set, so gradients reach only
// the logits. Updates the pi/m caches in `masks`.
float masked_forward_loss(const ModelGraph& model, MaskSet& masks,
                          const AudioBatch& batch, Rng& rng,
                          const MaskStepOptions& options = {});

// `iterations` steps of sample -> binarize -> loss -> plain gradient descent
// on all logits, batches taken from the manifest in order. Returns the
// updated MaskSet with noise-free finalized pi caches.
struct MaskLearnStats {
  std::vector<float> losses;
};
MaskSet learn_masks(const ModelGraph& model, const MaskSet& init,
                    const DatasetManifest& train_split, int iterations, double lr,
                    MaskLearnStats* stats = nullptr);

struct FinalMasks {
  // 1 = keep, 0 = drop; one entry per channel per group.
  std::map<std::string, std::vector<std::uint8_t>> keep;
  std::map<std::string, std::vector<float>> pi;
  double epsilon = 0.7;
  std::vector<std::string> warnings;
};

// Noise-free pi thresholded at epsilon (strict >); a group that would come
// out empty force-keeps its top-pi channel and records a warning.
FinalMasks finalize_masks(const MaskSet& masks);
FinalMasks finalize_masks(const MaskSet& masks, double epsilon_override);

std::map<std::string, int> kept_counts(const FinalMasks& final);

// Text mask file (one record per group) plus a binary logits sidecar at
// path + ".logits" for resuming.
void save_mask_file(const MaskSet& masks, const FinalMasks& final,
                    const std::string& path);
FinalMasks load_mask_file(const std::string& path);
// Rebuilds a MaskSet for `model` from the sidecar written by save_mask_file.
MaskSet load_logits_sidecar(const ModelGraph& model, const std::string& sidecar_path,
                            double epsilon, double tau, std::uint64_t seed);

}  // namespace sepprune
