#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sepprune {

enum class LayerKind {
  Conv1d,
  ConvTranspose1d,
  PointwiseConv,
  ChannelNorm,
  PRelu,
  Relu,
  AddJunction,
  SplitMasks,
  ElementwiseMul,
};

enum class Component { Encoder, Separator, Decoder };

const char* to_string(LayerKind k);
const char* to_string(Component c);
LayerKind layer_kind_from_string(const std::string& s);
Component component_from_string(const std::string& s);

// One node of the declarative graph. Parameter arrays are referenced by name
// so layers can share weights (the per-speaker decoders do). Roles per kind:
// conv kinds use weight/bias, channel_norm uses weight as the gain and bias
// as the shift, prelu uses weight as the slope.
struct LayerSpec {
  std::string name;
  LayerKind kind = LayerKind::Conv1d;
  int in_channels = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int dilation = 1;
  int padding = 0;
  int groups = 1;
  int split_index = 0;  // split_masks: which speaker segment
  Component component = Component::Separator;
  bool prunable = false;
  std::vector<std::string> inputs;
  std::string weight_name;
  std::string bias_name;

  bool has_weight() const { return !weight_name.empty(); }
  bool has_bias() const { return !bias_name.empty(); }
};

// (layer, port). port -1 is the output, k >= 0 the k-th input.
struct PortRef {
  std::string layer;
  int port = -1;
  auto operator<=>(const PortRef&) const = default;
};

// Set of ports whose channel axis must be pruned identically.
struct DependencyGroup {
  std::string id;
  int channels = 0;
  bool prunable = true;
  std::vector<PortRef> ports;
};

struct ModelGraph {
  std::vector<LayerSpec> layers;  // topological order
  std::vector<DependencyGroup> groups;
  std::vector<std::string> outputs;  // per-speaker decoder layers
  std::map<std::string, std::vector<float>> parameters;
  int speakers = 2;
  std::string prune_audit;  // JSON blueprint blob when this graph was pruned

  int layer_index(const std::string& name) const;
  const LayerSpec& layer(const std::string& name) const;
  // Index into groups of the group containing this output port, or -1.
  int group_of_output(const std::string& layer_name) const;
  int group_index(const std::string& id) const;
  std::vector<const DependencyGroup*> prunable_groups() const;

  // Structural checks: wiring, channel consistency, group soundness,
  // parameter presence/shapes. Throws InvalidArgumentError.
  void validate() const;
};

struct ToySepNetConfig {
  int encoder_channels = 64;  // E
  int block_channels = 128;   // H
  int blocks = 4;             // R
  int kernel = 3;             // depthwise kernel, odd
  int speakers = 2;           // C
  int encoder_kernel = 16;
  int encoder_stride = 8;
  std::uint64_t init_seed = 0x5eed;
};

// Encoder (strided conv 1->E), R residual separator blocks
// (pointwise E->H, dilated depthwise, channel_norm, prelu, pointwise H->E,
// residual add), a sigmoid mask head E->C*E split per speaker, mask
// application against the encoder output, and a shared transposed-conv
// decoder per speaker. Dependency groups: one E-channel group across the
// residual chain, one H-channel group inside each block.
ModelGraph build_toy_sepnet(const ToySepNetConfig& cfg);

// Expected sizes of every parameter array (used by init, validate, pruning).
std::map<std::string, std::size_t> expected_parameter_sizes(const ModelGraph& g);

// Fresh random init for an existing graph (conv weights He-uniform, norms to
// identity, prelu slopes to 0.25). Used for train-from-scratch baselines.
void reinitialize_parameters(ModelGraph& g, std::uint64_t seed);

}  // namespace sepprune
