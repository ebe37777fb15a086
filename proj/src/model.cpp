#include "sepprune/model.hpp"

#include <algorithm>
#include <cmath>
#include <set>

#include "sepprune/error.hpp"
#include "sepprune/rng.hpp"

namespace sepprune {

const char* to_string(LayerKind k) {
  switch (k) {
    case LayerKind::Conv1d: return "conv1d";
    case LayerKind::ConvTranspose1d: return "conv_transpose1d";
    case LayerKind::PointwiseConv: return "pointwise_conv";
    case LayerKind::ChannelNorm: return "channel_norm";
    case LayerKind::PRelu: return "prelu";
    case LayerKind::Relu: return "relu";
    case LayerKind::AddJunction: return "add_junction";
    case LayerKind::SplitMasks: return "split_masks";
    case LayerKind::ElementwiseMul: return "elementwise_mul";
  }
  return "?";
}

const char* to_string(Component c) {
  switch (c) {
    case Component::Encoder: return "encoder";
    case Component::Separator: return "separator";
    case Component::Decoder: return "decoder";
  }
  return "?";
}

LayerKind layer_kind_from_string(const std::string& s) {
  for (LayerKind k : {LayerKind::Conv1d, LayerKind::ConvTranspose1d,
                      LayerKind::PointwiseConv, LayerKind::ChannelNorm,
                      LayerKind::PRelu, LayerKind::Relu, LayerKind::AddJunction,
                      LayerKind::SplitMasks, LayerKind::ElementwiseMul})
    if (s == to_string(k)) return k;
  throw InvalidArgumentError("unknown layer kind '" + s + "'");
}

Component component_from_string(const std::string& s) {
  for (Component c : {Component::Encoder, Component::Separator, Component::Decoder})
    if (s == to_string(c)) return c;
  throw InvalidArgumentError("unknown component '" + s + "'");
}

int ModelGraph::layer_index(const std::string& name) const {
  for (std::size_t i = 0; i < layers.size(); ++i)
    if (layers[i].name == name) return static_cast<int>(i);
  return -1;
}

const LayerSpec& ModelGraph::layer(const std::string& name) const {
  const int i = layer_index(name);
  if (i < 0) throw InvalidArgumentError("no layer named '" + name + "'");
  return layers[static_cast<std::size_t>(i)];
}

int ModelGraph::group_of_output(const std::string& layer_name) const {
  for (std::size_t g = 0; g < groups.size(); ++g)
    for (const PortRef& p : groups[g].ports)
      if (p.port == -1 && p.layer == layer_name) return static_cast<int>(g);
  return -1;
}

int ModelGraph::group_index(const std::string& id) const {
  for (std::size_t g = 0; g < groups.size(); ++g)
    if (groups[g].id == id) return static_cast<int>(g);
  return -1;
}

std::vector<const DependencyGroup*> ModelGraph::prunable_groups() const {
  std::vector<const DependencyGroup*> out;
  for (const auto& g : groups)
    if (g.prunable) out.push_back(&g);
  return out;
}

std::map<std::string, std::size_t> expected_parameter_sizes(const ModelGraph& g) {
  std::map<std::string, std::size_t> out;
  for (const LayerSpec& l : g.layers) {
    switch (l.kind) {
      case LayerKind::Conv1d:
      case LayerKind::PointwiseConv:
        out[l.weight_name] = static_cast<std::size_t>(l.out_channels) *
                             (l.in_channels / l.groups) * l.kernel;
        if (l.has_bias()) out[l.bias_name] = static_cast<std::size_t>(l.out_channels);
        break;
      case LayerKind::ConvTranspose1d:
        out[l.weight_name] =
            static_cast<std::size_t>(l.in_channels) * l.out_channels * l.kernel;
        if (l.has_bias()) out[l.bias_name] = static_cast<std::size_t>(l.out_channels);
        break;
      case LayerKind::ChannelNorm:
        out[l.weight_name] = static_cast<std::size_t>(l.out_channels);
        out[l.bias_name] = static_cast<std::size_t>(l.out_channels);
        break;
      case LayerKind::PRelu:
        out[l.weight_name] = static_cast<std::size_t>(l.out_channels);
        break;
      default:
        break;
    }
  }
  return out;
}

namespace {

int port_channels(const ModelGraph& g, const PortRef& p) {
  const LayerSpec& l = g.layer(p.layer);
  if (p.port < 0) return l.out_channels;
  if (p.port >= static_cast<int>(l.inputs.size()))
    throw InvalidArgumentError("group references missing input port of '" + p.layer + "'");
  return g.layer(l.inputs[static_cast<std::size_t>(p.port)]).out_channels;
}

}  // namespace

void ModelGraph::validate() const {
  std::set<std::string> names;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    const LayerSpec& l = layers[i];
    if (!names.insert(l.name).second)
      throw InvalidArgumentError("duplicate layer name '" + l.name + "'");
    if (l.in_channels < 1 || l.out_channels < 1)
      throw InvalidArgumentError("layer '" + l.name + "' has non-positive channels");
    for (const std::string& in : l.inputs) {
      const int j = layer_index(in);
      if (j < 0 || static_cast<std::size_t>(j) >= i)
        throw InvalidArgumentError("layer '" + l.name + "' input '" + in +
                                   "' missing or not earlier in the graph");
    }
    switch (l.kind) {
      case LayerKind::AddJunction: {
        if (l.inputs.size() < 2)
          throw InvalidArgumentError("add_junction '" + l.name + "' needs >= 2 inputs");
        for (const std::string& in : l.inputs)
          if (layer(in).out_channels != l.out_channels)
            throw InvalidArgumentError("add_junction '" + l.name +
                                       "' inputs must share channel counts");
        break;
      }
      case LayerKind::ElementwiseMul: {
        if (l.inputs.size() != 2)
          throw InvalidArgumentError("elementwise_mul '" + l.name + "' needs 2 inputs");
        for (const std::string& in : l.inputs)
          if (layer(in).out_channels != l.out_channels)
            throw InvalidArgumentError("elementwise_mul '" + l.name +
                                       "' channel mismatch");
        break;
      }
      case LayerKind::SplitMasks: {
        if (l.inputs.size() != 1)
          throw InvalidArgumentError("split_masks '" + l.name + "' needs 1 input");
        if (layer(l.inputs[0]).out_channels != l.in_channels)
          throw InvalidArgumentError("split_masks '" + l.name + "' channel mismatch");
        if (l.split_index < 0 ||
            (l.split_index + 1) * l.out_channels > l.in_channels)
          throw InvalidArgumentError("split_masks '" + l.name + "' segment out of range");
        break;
      }
      default: {
        if (l.inputs.size() != 1)
          throw InvalidArgumentError("layer '" + l.name + "' needs exactly 1 input");
        if (layer(l.inputs[0]).out_channels != l.in_channels)
          throw InvalidArgumentError("edge into '" + l.name +
                                     "': producer channels " +
                                     std::to_string(layer(l.inputs[0]).out_channels) +
                                     " != consumer in_channels " +
                                     std::to_string(l.in_channels));
        break;
      }
      case LayerKind::Conv1d:
      case LayerKind::PointwiseConv: {
        if (l.inputs.size() != 1 && !l.inputs.empty())
          throw InvalidArgumentError("conv '" + l.name + "' needs exactly 1 input");
        if (!l.inputs.empty() && layer(l.inputs[0]).out_channels != l.in_channels)
          throw InvalidArgumentError("edge into '" + l.name + "' channel mismatch");
        if (l.in_channels % l.groups != 0 || l.out_channels % l.groups != 0)
          throw InvalidArgumentError("conv '" + l.name + "' channels not divisible by groups");
        break;
      }
    }
  }
  if (outputs.empty()) throw InvalidArgumentError("graph has no outputs");
  for (const std::string& o : outputs)
    if (layer_index(o) < 0)
      throw InvalidArgumentError("output layer '" + o + "' missing");

  // Groups: consistent channel counts, no port in two groups.
  std::set<std::pair<std::string, int>> seen_ports;
  for (const DependencyGroup& grp : groups) {
    if (grp.ports.empty())
      throw InvalidArgumentError("dependency group '" + grp.id + "' is empty");
    for (const PortRef& p : grp.ports) {
      if (layer_index(p.layer) < 0)
        throw InvalidArgumentError("group '" + grp.id + "' references missing layer '" +
                                   p.layer + "'");
      if (port_channels(*this, p) != grp.channels)
        throw InvalidArgumentError("group '" + grp.id + "' port " + p.layer +
                                   " has mismatched channel count");
      if (!seen_ports.insert({p.layer, p.port}).second)
        throw InvalidArgumentError("port of '" + p.layer +
                                   "' appears in more than one dependency group");
    }
  }
  // prunable layers must belong to some group
  for (const LayerSpec& l : layers) {
    if (!l.prunable) continue;
    bool in_group = false;
    for (const DependencyGroup& grp : groups)
      for (const PortRef& p : grp.ports)
        if (p.layer == l.name) in_group = true;
    if (!in_group)
      throw InvalidArgumentError("prunable layer '" + l.name +
                                 "' is not inside any dependency group");
  }

  // Parameters present with the right sizes.
  for (const auto& [name, size] : expected_parameter_sizes(*this)) {
    auto it = parameters.find(name);
    if (it == parameters.end())
      throw InvalidArgumentError("missing parameter array '" + name + "'");
    if (it->second.size() != size)
      throw InvalidArgumentError("parameter '" + name + "' has " +
                                 std::to_string(it->second.size()) + " values, expected " +
                                 std::to_string(size));
  }
}

void reinitialize_parameters(ModelGraph& g, std::uint64_t seed) {
  Rng rng(seed);
  std::set<std::string> done;
  const auto sizes = expected_parameter_sizes(g);
  for (const LayerSpec& l : g.layers) {
    if (!l.has_weight() || !done.insert(l.weight_name).second) continue;
    switch (l.kind) {
      case LayerKind::Conv1d:
      case LayerKind::PointwiseConv:
      case LayerKind::ConvTranspose1d: {
        const int fan_in = l.kind == LayerKind::ConvTranspose1d
                               ? l.in_channels * l.kernel
                               : (l.in_channels / l.groups) * l.kernel;
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        auto& w = g.parameters[l.weight_name];
        w.resize(sizes.at(l.weight_name));
        for (auto& v : w) v = static_cast<float>(rng.uniform(-bound, bound));
        if (l.has_bias()) {
          auto& b = g.parameters[l.bias_name];
          b.resize(static_cast<std::size_t>(l.out_channels));
          for (auto& v : b) v = static_cast<float>(rng.uniform(-bound, bound));
        }
        break;
      }
      case LayerKind::ChannelNorm:
        g.parameters[l.weight_name].assign(static_cast<std::size_t>(l.out_channels), 1.0f);
        g.parameters[l.bias_name].assign(static_cast<std::size_t>(l.out_channels), 0.0f);
        break;
      case LayerKind::PRelu:
        g.parameters[l.weight_name].assign(static_cast<std::size_t>(l.out_channels), 0.25f);
        break;
      default:
        break;
    }
  }
}

ModelGraph build_toy_sepnet(const ToySepNetConfig& cfg) {
  const int E = cfg.encoder_channels, H = cfg.block_channels, R = cfg.blocks;
  const int K = cfg.kernel, C = cfg.speakers;
  if (E < 1 || H < 1 || R < 1 || K < 1 || C < 1 || cfg.encoder_kernel < 1 ||
      cfg.encoder_stride < 1)
    throw InvalidArgumentError("build_toy_sepnet: all dimensions must be positive");
  if (K % 2 == 0)
    throw InvalidArgumentError("build_toy_sepnet: depthwise kernel must be odd");

  ModelGraph g;
  g.speakers = C;
  const int enc_pad = std::max(0, (cfg.encoder_kernel - cfg.encoder_stride) / 2);

  auto conv = [&](std::string name, LayerKind kind, int cin, int cout, int kernel,
                  int stride, int dilation, int padding, int groups,
                  Component comp, bool prunable, std::vector<std::string> ins) {
    LayerSpec l;
    l.name = name;
    l.kind = kind;
    l.in_channels = cin;
    l.out_channels = cout;
    l.kernel = kernel;
    l.stride = stride;
    l.dilation = dilation;
    l.padding = padding;
    l.groups = groups;
    l.component = comp;
    l.prunable = prunable;
    l.inputs = std::move(ins);
    l.weight_name = name + ".weight";
    l.bias_name = name + ".bias";
    g.layers.push_back(std::move(l));
  };

  conv("enc", LayerKind::Conv1d, 1, E, cfg.encoder_kernel, cfg.encoder_stride, 1,
       enc_pad, 1, Component::Encoder, false, {});

  DependencyGroup chain;
  chain.id = "sep.chain";
  chain.channels = E;
  chain.ports.push_back({"enc", -1});

  std::string prev = "enc";
  for (int r = 0; r < R; ++r) {
    const std::string p = "blk" + std::to_string(r) + ".";
    const int dil = 1 << r;
    conv(p + "pw1", LayerKind::PointwiseConv, E, H, 1, 1, 1, 0, 1,
         Component::Separator, true, {prev});
    conv(p + "dw", LayerKind::Conv1d, H, H, K, 1, dil, dil * (K - 1) / 2, H,
         Component::Separator, true, {p + "pw1"});
    {
      LayerSpec l;
      l.name = p + "norm";
      l.kind = LayerKind::ChannelNorm;
      l.in_channels = l.out_channels = H;
      l.component = Component::Separator;
      l.prunable = true;
      l.inputs = {p + "dw"};
      l.weight_name = l.name + ".gain";
      l.bias_name = l.name + ".bias";
      g.layers.push_back(std::move(l));
    }
    {
      LayerSpec l;
      l.name = p + "act";
      l.kind = LayerKind::PRelu;
      l.in_channels = l.out_channels = H;
      l.component = Component::Separator;
      l.prunable = true;
      l.inputs = {p + "norm"};
      l.weight_name = l.name + ".slope";
      g.layers.push_back(std::move(l));
    }
    conv(p + "pw2", LayerKind::PointwiseConv, H, E, 1, 1, 1, 0, 1,
         Component::Separator, true, {p + "act"});
    {
      LayerSpec l;
      l.name = p + "add";
      l.kind = LayerKind::AddJunction;
      l.in_channels = l.out_channels = E;
      l.component = Component::Separator;
      l.prunable = true;
      l.inputs = {prev, p + "pw2"};
      g.layers.push_back(std::move(l));
    }

    DependencyGroup inner;
    inner.id = "sep.blk" + std::to_string(r) + ".h";
    inner.channels = H;
    inner.ports = {{p + "pw1", -1}, {p + "dw", 0},   {p + "dw", -1},
                   {p + "norm", 0}, {p + "norm", -1}, {p + "act", 0},
                   {p + "act", -1}, {p + "pw2", 0}};
    g.groups.push_back(std::move(inner));

    chain.ports.push_back({p + "pw1", 0});
    chain.ports.push_back({p + "add", 0});
    chain.ports.push_back({p + "add", 1});
    chain.ports.push_back({p + "add", -1});
    chain.ports.push_back({p + "pw2", -1});
    prev = p + "add";
  }

  conv("mask_head", LayerKind::PointwiseConv, E, C * E, 1, 1, 1, 0, 1,
       Component::Separator, true, {prev});
  chain.ports.push_back({"mask_head", 0});

  for (int c = 0; c < C; ++c) {
    {
      LayerSpec l;
      l.name = "split" + std::to_string(c);
      l.kind = LayerKind::SplitMasks;
      l.in_channels = C * E;
      l.out_channels = E;
      l.split_index = c;
      l.component = Component::Separator;
      l.prunable = true;
      l.inputs = {"mask_head"};
      g.layers.push_back(std::move(l));
    }
    {
      LayerSpec l;
      l.name = "mul" + std::to_string(c);
      l.kind = LayerKind::ElementwiseMul;
      l.in_channels = l.out_channels = E;
      l.component = Component::Separator;
      l.prunable = true;
      l.inputs = {"split" + std::to_string(c), "enc"};
      g.layers.push_back(std::move(l));
    }
    {
      LayerSpec l;
      l.name = "dec" + std::to_string(c);
      l.kind = LayerKind::ConvTranspose1d;
      l.in_channels = E;
      l.out_channels = 1;
      l.kernel = cfg.encoder_kernel;
      l.stride = cfg.encoder_stride;
      l.padding = enc_pad;
      l.component = Component::Decoder;
      l.inputs = {"mul" + std::to_string(c)};
      l.weight_name = "dec.weight";  // shared across speakers
      l.bias_name = "dec.bias";
      g.layers.push_back(std::move(l));
    }
    const std::string sc = std::to_string(c);
    chain.ports.push_back({"split" + sc, -1});
    chain.ports.push_back({"mul" + sc, 0});
    chain.ports.push_back({"mul" + sc, 1});
    chain.ports.push_back({"mul" + sc, -1});
    chain.ports.push_back({"dec" + sc, 0});
    g.outputs.push_back("dec" + sc);
  }
  g.groups.insert(g.groups.begin(), std::move(chain));

  // He-style uniform init, deterministic in declaration order.
  Rng rng(cfg.init_seed);
  for (const LayerSpec& l : g.layers) {
    if (!l.has_weight()) continue;
    switch (l.kind) {
      case LayerKind::Conv1d:
      case LayerKind::PointwiseConv:
      case LayerKind::ConvTranspose1d: {
        const int fan_in = l.kind == LayerKind::ConvTranspose1d
                               ? l.in_channels * l.kernel
                               : (l.in_channels / l.groups) * l.kernel;
        const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        auto& w = g.parameters[l.weight_name];
        if (w.empty()) {
          const std::size_t n = expected_parameter_sizes(g).at(l.weight_name);
          w.resize(n);
          for (auto& v : w) v = static_cast<float>(rng.uniform(-bound, bound));
          auto& b = g.parameters[l.bias_name];
          b.resize(static_cast<std::size_t>(l.out_channels));
          for (auto& v : b) v = static_cast<float>(rng.uniform(-bound, bound));
        }
        break;
      }
      case LayerKind::ChannelNorm:
        g.parameters[l.weight_name].assign(static_cast<std::size_t>(l.out_channels), 1.0f);
        g.parameters[l.bias_name].assign(static_cast<std::size_t>(l.out_channels), 0.0f);
        break;
      case LayerKind::PRelu:
        g.parameters[l.weight_name].assign(static_cast<std::size_t>(l.out_channels), 0.25f);
        break;
      default:
        break;
    }
  }

  g.validate();
  return g;
}

}  // namespace sepprune
