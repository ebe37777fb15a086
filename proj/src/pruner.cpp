#include "sepprune/pruner.hpp"

#include <algorithm>
#include <cmath>
#include <json.hpp>
#include <numeric>
#include <set>

#include "sepprune/error.hpp"
#include "sepprune/rng.hpp"

namespace sepprune {

namespace {

std::vector<int> full_range(int n) {
  std::vector<int> v(static_cast<std::size_t>(n));
  std::iota(v.begin(), v.end(), 0);
  return v;
}

bool channel_preserving(LayerKind k) {
  switch (k) {
    case LayerKind::ChannelNorm:
    case LayerKind::PRelu:
    case LayerKind::Relu:
    case LayerKind::AddJunction:
    case LayerKind::ElementwiseMul:
      return true;
    default:
      return false;
  }
}

}  // namespace

std::string PruneBlueprint::to_json() const {
  nlohmann::json j;
  for (const auto& [gid, kept] : group_kept) j["group_kept"][gid] = kept;
  for (const auto& [name, s] : layers)
    j["layers"][name] = {{"in", s.in}, {"out", s.out}};
  return j.dump();
}

PruneBlueprint blueprint_from_masks(const ModelGraph& g, const FinalMasks& fm) {
  PruneBlueprint bp;
  for (const DependencyGroup* grp : g.prunable_groups()) {
    auto it = fm.keep.find(grp->id);
    if (it == fm.keep.end())
      throw InvalidArgumentError("blueprint: masks missing group '" + grp->id + "'");
    if (static_cast<int>(it->second.size()) != grp->channels)
      throw InvalidArgumentError("blueprint: mask size mismatch for '" + grp->id + "'");
    std::vector<int> kept;
    for (int j = 0; j < grp->channels; ++j)
      if (it->second[static_cast<std::size_t>(j)]) kept.push_back(j);
    if (kept.empty())
      throw InvalidArgumentError("blueprint: group '" + grp->id + "' would keep 0 channels");
    bp.group_kept.emplace(grp->id, std::move(kept));
  }

  // Kept list of the tensor each layer produces, in topological order.
  std::map<std::string, std::vector<int>> tensor_kept;
  for (const LayerSpec& l : g.layers) {
    const int gi = g.group_of_output(l.name);
    if (gi >= 0 && bp.group_kept.count(g.groups[static_cast<std::size_t>(gi)].id)) {
      tensor_kept[l.name] = bp.group_kept.at(g.groups[static_cast<std::size_t>(gi)].id);
    } else if (channel_preserving(l.kind) && !l.inputs.empty()) {
      tensor_kept[l.name] = tensor_kept.at(l.inputs[0]);
    } else {
      tensor_kept[l.name] = full_range(l.out_channels);
    }
  }
  // A tensor consumed by split_masks layers is sliced as the concatenation of
  // its segments' kept lists (the mask head's C*E axis).
  for (const LayerSpec& l : g.layers) {
    if (l.kind != LayerKind::SplitMasks) continue;
    const std::string& producer = l.inputs[0];
    auto& pk = tensor_kept.at(producer);
    if (static_cast<int>(pk.size()) == g.layer(producer).out_channels) {
      // First split consumer seen: rebuild the producer's list segment-wise.
      std::vector<int> derived;
      for (const LayerSpec& s : g.layers) {
        if (s.kind != LayerKind::SplitMasks || s.inputs[0] != producer) continue;
        for (int j : tensor_kept.at(s.name))
          derived.push_back(s.split_index * s.out_channels + j);
      }
      std::sort(derived.begin(), derived.end());
      if (!derived.empty()) pk = std::move(derived);
    }
  }

  for (const LayerSpec& l : g.layers) {
    PruneBlueprint::LayerSlices s;
    s.in = l.inputs.empty() ? full_range(l.in_channels) : tensor_kept.at(l.inputs[0]);
    s.out = tensor_kept.at(l.name);
    // Every input edge must agree on its kept list (junctions included).
    for (const std::string& in : l.inputs)
      if (tensor_kept.at(in) != s.in)
        throw InvalidArgumentError("blueprint: inconsistent kept lists into '" + l.name + "'");
    if (l.kind == LayerKind::Conv1d && l.groups > 1) {
      if (l.groups != l.in_channels || l.groups != l.out_channels)
        throw InvalidArgumentError("blueprint: only depthwise grouped convs are prunable");
      if (s.in != s.out)
        throw InvalidArgumentError("blueprint: depthwise conv '" + l.name +
                                   "' needs matching in/out kept lists");
    }
    bp.layers.emplace(l.name, std::move(s));
  }

  // Blueprint invariants: ordered, in-bounds, edge-consistent.
  for (const LayerSpec& l : g.layers) {
    const auto& s = bp.layers.at(l.name);
    auto check_list = [&](const std::vector<int>& v, int bound) {
      if (v.empty()) throw InvalidArgumentError("blueprint: empty kept list at '" + l.name + "'");
      for (std::size_t i = 0; i < v.size(); ++i) {
        if (v[i] < 0 || v[i] >= bound)
          throw InvalidArgumentError("blueprint: kept index out of bounds at '" + l.name + "'");
        if (i > 0 && v[i] <= v[i - 1])
          throw InvalidArgumentError("blueprint: kept list not strictly increasing at '" +
                                     l.name + "'");
      }
    };
    check_list(s.in, l.in_channels);
    check_list(s.out, l.out_channels);
    for (const std::string& in : l.inputs) {
      if (channel_preserving(l.kind) || l.kind == LayerKind::SplitMasks) continue;
      if (bp.layers.at(in).out != s.in)
        throw InvalidArgumentError("blueprint: edge " + in + " -> " + l.name +
                                   " kept lists disagree");
    }
  }
  return bp;
}

ModelGraph apply_prune(const ModelGraph& g, const PruneBlueprint& bp) {
  ModelGraph out;
  out.speakers = g.speakers;
  out.outputs = g.outputs;

  std::set<std::string> sliced;
  for (const LayerSpec& l : g.layers) {
    auto it = bp.layers.find(l.name);
    if (it == bp.layers.end())
      throw InvalidArgumentError("apply_prune: blueprint missing layer '" + l.name + "'");
    const auto& s = it->second;
    LayerSpec nl = l;
    nl.in_channels = static_cast<int>(s.in.size());
    nl.out_channels = static_cast<int>(s.out.size());
    if (l.kind == LayerKind::Conv1d && l.groups > 1)
      nl.groups = static_cast<int>(s.out.size());
    out.layers.push_back(nl);

    // Slice parameters (shared arrays once).
    auto slice_vec = [&](const std::vector<float>& src, const std::vector<int>& idx) {
      std::vector<float> dst;
      dst.reserve(idx.size());
      for (int i : idx) dst.push_back(src[static_cast<std::size_t>(i)]);
      return dst;
    };
    switch (l.kind) {
      case LayerKind::Conv1d:
      case LayerKind::PointwiseConv: {
        if (sliced.insert(l.weight_name).second) {
          const auto& w = g.parameters.at(l.weight_name);
          const int cpg = l.in_channels / l.groups;
          std::vector<float> nw;
          if (l.groups == 1) {
            nw.reserve(s.out.size() * s.in.size() * static_cast<std::size_t>(l.kernel));
            for (int co : s.out)
              for (int ci : s.in)
                for (int k = 0; k < l.kernel; ++k)
                  nw.push_back(w[(static_cast<std::size_t>(co) * cpg + ci) * l.kernel + k]);
          } else {  // depthwise
            for (int c : s.out)
              for (int k = 0; k < l.kernel; ++k)
                nw.push_back(w[static_cast<std::size_t>(c) * l.kernel + k]);
          }
          out.parameters[l.weight_name] = std::move(nw);
          if (l.has_bias())
            out.parameters[l.bias_name] = slice_vec(g.parameters.at(l.bias_name), s.out);
        }
        break;
      }
      case LayerKind::ConvTranspose1d: {
        if (sliced.insert(l.weight_name).second) {
          const auto& w = g.parameters.at(l.weight_name);
          std::vector<float> nw;
          nw.reserve(s.in.size() * s.out.size() * static_cast<std::size_t>(l.kernel));
          for (int ci : s.in)
            for (int co : s.out)
              for (int k = 0; k < l.kernel; ++k)
                nw.push_back(
                    w[(static_cast<std::size_t>(ci) * l.out_channels + co) * l.kernel + k]);
          out.parameters[l.weight_name] = std::move(nw);
          if (l.has_bias())
            out.parameters[l.bias_name] = slice_vec(g.parameters.at(l.bias_name), s.out);
        }
        break;
      }
      case LayerKind::ChannelNorm:
        if (sliced.insert(l.weight_name).second) {
          out.parameters[l.weight_name] = slice_vec(g.parameters.at(l.weight_name), s.out);
          out.parameters[l.bias_name] = slice_vec(g.parameters.at(l.bias_name), s.out);
        }
        break;
      case LayerKind::PRelu:
        if (sliced.insert(l.weight_name).second)
          out.parameters[l.weight_name] = slice_vec(g.parameters.at(l.weight_name), s.out);
        break;
      default:
        break;
    }
  }

  for (const DependencyGroup& grp : g.groups) {
    DependencyGroup ng = grp;
    auto it = bp.group_kept.find(grp.id);
    if (it != bp.group_kept.end()) ng.channels = static_cast<int>(it->second.size());
    out.groups.push_back(std::move(ng));
  }
  out.prune_audit = bp.to_json();
  out.validate();
  return out;
}

namespace {

FinalMasks masks_from_kept(const ModelGraph& g,
                           const std::map<std::string, std::vector<int>>& kept) {
  FinalMasks fm;
  fm.epsilon = 0.5;
  for (const DependencyGroup* grp : g.prunable_groups()) {
    const auto& idx = kept.at(grp->id);
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(grp->channels), 0);
    std::vector<float> pi(static_cast<std::size_t>(grp->channels), 0.0f);
    for (int j : idx) {
      keep[static_cast<std::size_t>(j)] = 1;
      pi[static_cast<std::size_t>(j)] = 1.0f;
    }
    fm.keep.emplace(grp->id, std::move(keep));
    fm.pi.emplace(grp->id, std::move(pi));
  }
  return fm;
}

int checked_count(const std::map<std::string, int>& counts, const DependencyGroup& grp) {
  auto it = counts.find(grp.id);
  if (it == counts.end())
    throw InvalidArgumentError("mask counts missing group '" + grp.id + "'");
  if (it->second < 1)
    throw InvalidArgumentError("mask: keep count < 1 for group '" + grp.id + "'");
  if (it->second > grp.channels)
    throw InvalidArgumentError("mask: keep count exceeds channels for '" + grp.id + "'");
  return it->second;
}

std::map<std::string, int> counts_from_fraction(const ModelGraph& g, double f) {
  if (f <= 0.0 || f > 1.0)
    throw InvalidArgumentError("mask: keep fraction must be in (0,1]");
  std::map<std::string, int> counts;
  for (const DependencyGroup* grp : g.prunable_groups())
    counts[grp->id] = static_cast<int>(std::lround(f * grp->channels));
  return counts;
}

}  // namespace

FinalMasks random_mask_with_counts(const ModelGraph& g,
                                   const std::map<std::string, int>& counts,
                                   std::uint64_t seed) {
  Rng rng(seed);
  std::map<std::string, std::vector<int>> kept;
  for (const DependencyGroup* grp : g.prunable_groups()) {
    const int n = checked_count(counts, *grp);
    std::vector<int> idx(static_cast<std::size_t>(grp->channels));
    std::iota(idx.begin(), idx.end(), 0);
    for (int j = 0; j < n; ++j) {
      const auto pick = j + static_cast<int>(rng.uniform_index(
                                static_cast<std::uint64_t>(grp->channels - j)));
      std::swap(idx[static_cast<std::size_t>(j)], idx[static_cast<std::size_t>(pick)]);
    }
    idx.resize(static_cast<std::size_t>(n));
    std::sort(idx.begin(), idx.end());
    kept.emplace(grp->id, std::move(idx));
  }
  return masks_from_kept(g, kept);
}

FinalMasks random_mask(const ModelGraph& g, double keep_fraction, std::uint64_t seed) {
  return random_mask_with_counts(g, counts_from_fraction(g, keep_fraction), seed);
}

FinalMasks magnitude_mask_with_counts(const ModelGraph& g,
                                      const std::map<std::string, int>& counts) {
  std::map<std::string, std::vector<int>> kept;
  for (const DependencyGroup* grp : g.prunable_groups()) {
    const int n = checked_count(counts, *grp);
    std::vector<double> score(static_cast<std::size_t>(grp->channels), 0.0);
    for (const PortRef& p : grp->ports) {
      if (p.port != -1) continue;
      const LayerSpec& l = g.layer(p.layer);
      if (l.kind != LayerKind::Conv1d && l.kind != LayerKind::PointwiseConv) continue;
      const auto& w = g.parameters.at(l.weight_name);
      const std::size_t row = static_cast<std::size_t>(l.in_channels / l.groups) *
                              static_cast<std::size_t>(l.kernel);
      for (int c = 0; c < grp->channels; ++c)
        for (std::size_t i = 0; i < row; ++i)
          score[static_cast<std::size_t>(c)] +=
              std::fabs(w[static_cast<std::size_t>(c) * row + i]);
    }
    std::vector<int> order(static_cast<std::size_t>(grp->channels));
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
      return score[static_cast<std::size_t>(a)] > score[static_cast<std::size_t>(b)];
    });
    order.resize(static_cast<std::size_t>(n));
    std::sort(order.begin(), order.end());
    kept.emplace(grp->id, std::move(order));
  }
  return masks_from_kept(g, kept);
}

FinalMasks magnitude_mask(const ModelGraph& g, double keep_fraction) {
  return magnitude_mask_with_counts(g, counts_from_fraction(g, keep_fraction));
}

}  // namespace sepprune
