#pragma once

// Turns finalized binary masks into a structurally smaller graph. Kept
// channel order is preserved, surviving weights are exact sub-slices, and the
// pruned model's forward agrees exactly with the masked full model.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "sepprune/masks.hpp"
#include "sepprune/model.hpp"

namespace sepprune {

struct PruneBlueprint {
  // Kept channel indices per dependency group, strictly increasing.
  std::map<std::string, std::vector<int>> group_kept;
  struct LayerSlices {
    std::vector<int> in, out;  // empty means "keep every channel"
  };
  std::map<std::string, LayerSlices> layers;

  std::string to_json() const;
};

PruneBlueprint blueprint_from_masks(const ModelGraph& model, const FinalMasks& masks);

// New graph with reduced channel counts; parameters are exact sub-slices of
// the originals, shared arrays sliced once. The blueprint is embedded as
// prune_audit metadata.
ModelGraph apply_prune(const ModelGraph& model, const PruneBlueprint& blueprint);

// Baseline mask generators. Counts must be >= 1 per group.
FinalMasks random_mask(const ModelGraph& model, double keep_fraction,
                       std::uint64_t seed);
FinalMasks random_mask_with_counts(const ModelGraph& model,
                                   const std::map<std::string, int>& counts,
                                   std::uint64_t seed);
// Keeps channels with the largest L1 norm of their producing conv weights,
// aggregated over the group's producer layers; ties go to the lower index.
FinalMasks magnitude_mask(const ModelGraph& model, double keep_fraction);
FinalMasks magnitude_mask_with_counts(const ModelGraph& model,
                                      const std::map<std::string, int>& counts);

}  // namespace sepprune
