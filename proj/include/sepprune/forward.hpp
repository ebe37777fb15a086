#pragma once

// Graph execution on a tape. One implementation serves training (parameters
// as differentiable leaves), mask learning (parameters constant, masks
// differentiable), and plain inference (recording off).

#include <map>
#include <set>
#include <string>
#include <vector>

#include "sepprune/data.hpp"
#include "sepprune/model.hpp"
#include "sepprune/ops.hpp"

namespace sepprune {

template <class T>
struct ForwardOptions {
  // group id -> [C_group] mask node on the same tape. Masks multiply grouped
  // tensors right before they reach a channel-mixing consumer (pointwise or
  // dense convs, the decoder). Per-channel ops cannot couple channels, so
  // this is exactly equivalent to zeroing at every grouped port while giving
  // dropped channels a live activation up to their mask site (the gradient
  // through the straight-through estimator then reflects the whole path).
  const std::map<std::string, Tensor<T>>* masks = nullptr;
  bool params_require_grad = false;
};

// True for kinds whose output channels depend on more than one input channel.
inline bool mixes_channels(const LayerSpec& l) {
  switch (l.kind) {
    case LayerKind::Conv1d:
    case LayerKind::PointwiseConv:
      return l.groups < l.in_channels;
    case LayerKind::ConvTranspose1d:
      return true;
    default:
      return false;
  }
}

// Layers whose grouped output tensor must be masked: some consumer mixes
// channels, or the tensor is a graph output.
inline std::set<std::string> mask_site_layers(const ModelGraph& g) {
  std::set<std::string> sites;
  for (const LayerSpec& l : g.layers) {
    if (g.group_of_output(l.name) < 0) continue;
    bool needed = false;
    for (const LayerSpec& consumer : g.layers)
      for (const std::string& in : consumer.inputs)
        if (in == l.name && mixes_channels(consumer)) needed = true;
    for (const std::string& out : g.outputs)
      if (out == l.name) needed = true;
    if (needed) sites.insert(l.name);
  }
  return sites;
}

// Creates one leaf per distinct parameter array (shared names deduped) so
// gradients of shared weights accumulate across uses.
template <class T>
std::map<std::string, Tensor<T>> bind_parameters(Tape<T>& tape, const ModelGraph& g,
                                                 bool requires_grad) {
  std::map<std::string, Tensor<T>> out;
  for (const auto& [name, values] : g.parameters) {
    std::vector<T> cast(values.begin(), values.end());
    out.emplace(name, tape.leaf({static_cast<int>(values.size())}, std::move(cast),
                                requires_grad));
  }
  return out;
}

template <class T>
Tensor<T> reshape_param(Tape<T>& tape, Tensor<T> flat, Shape shape) {
  // Parameters are stored flat; ops want shaped tensors. A zero-copy view op
  // keeps gradient flow intact.
  detail::require(shape_numel(shape) == flat.numel(), "reshape_param: size mismatch");
  const int id = flat.id();
  std::vector<T> vals(flat.values().begin(), flat.values().end());
  return tape.emit("reshape", std::move(shape), std::move(vals), {id},
                   [id](Tape<T>& tp, int out_id) {
                     if (!tp.node(id).needs_grad) return;
                     const T* G = tp.node(out_id).grad.data();
                     T* gx = tp.grad_buffer(id).data();
                     const std::size_t n = tp.node(out_id).values.size();
                     for (std::size_t i = 0; i < n; ++i) gx[i] += G[i];
                   });
}

template <class T>
struct ForwardResult {
  Tensor<T> estimates;  // [B, speakers, T]
  std::map<std::string, Tensor<T>> params;
};

template <class T>
ForwardResult<T> run_forward(Tape<T>& tape, const ModelGraph& g, Tensor<T> mixture,
                             const ForwardOptions<T>& opt = {}) {
  detail::require(mixture.shape().size() == 3 && mixture.shape()[1] == 1,
                  "run_forward: mixture must be [B,1,T]");
  const int T_in = mixture.shape()[2];
  if (opt.masks) {
    for (const auto& [gid, m] : *opt.masks) {
      const int gi = g.group_index(gid);
      detail::require(gi >= 0, "run_forward: mask group '" + gid + "' not in model");
      detail::require(m.shape() == Shape{g.groups[static_cast<std::size_t>(gi)].channels},
                      "run_forward: mask size mismatch for group '" + gid + "'");
    }
  }

  auto params = bind_parameters(tape, g, opt.params_require_grad);
  auto shaped = [&](const std::string& name, Shape shape) {
    auto it = params.find(name);
    detail::require(it != params.end(), "run_forward: missing parameter '" + name + "'");
    return reshape_param(tape, it->second, std::move(shape));
  };
  const std::set<std::string> sites = opt.masks ? mask_site_layers(g) : std::set<std::string>{};

  std::map<std::string, Tensor<T>> values;
  auto input_of = [&](const LayerSpec& l, int k) {
    if (l.inputs.empty()) return mixture;  // graph entry
    auto it = values.find(l.inputs[static_cast<std::size_t>(k)]);
    detail::require(it != values.end(),
                    "run_forward: input '" + l.inputs[static_cast<std::size_t>(k)] +
                        "' not computed");
    return it->second;
  };

  for (const LayerSpec& l : g.layers) {
    Tensor<T> y;
    switch (l.kind) {
      case LayerKind::Conv1d:
      case LayerKind::PointwiseConv: {
        ConvSpec spec;
        spec.stride = l.stride;
        spec.dilation = l.dilation;
        spec.groups = l.groups;
        spec.padding = l.padding;
        auto w = shaped(l.weight_name, {l.out_channels, l.in_channels / l.groups, l.kernel});
        std::optional<Tensor<T>> b;
        if (l.has_bias()) b = shaped(l.bias_name, {l.out_channels});
        y = conv1d(input_of(l, 0), w, b, spec);
        break;
      }
      case LayerKind::ConvTranspose1d: {
        auto w = shaped(l.weight_name, {l.in_channels, l.out_channels, l.kernel});
        std::optional<Tensor<T>> b;
        if (l.has_bias()) b = shaped(l.bias_name, {l.out_channels});
        y = conv_transpose1d(input_of(l, 0), w, b, l.stride, l.padding);
        break;
      }
      case LayerKind::ChannelNorm:
        y = channel_norm(input_of(l, 0), shaped(l.weight_name, {l.out_channels}),
                         shaped(l.bias_name, {l.out_channels}));
        break;
      case LayerKind::PRelu:
        y = prelu(input_of(l, 0), shaped(l.weight_name, {l.out_channels}));
        break;
      case LayerKind::Relu:
        y = relu(input_of(l, 0));
        break;
      case LayerKind::AddJunction: {
        y = input_of(l, 0);
        for (std::size_t k = 1; k < l.inputs.size(); ++k) y = add(y, input_of(l, static_cast<int>(k)));
        break;
      }
      case LayerKind::SplitMasks: {
        auto x = input_of(l, 0);
        y = sigmoid(slice_channels(x, l.split_index * l.out_channels,
                                   (l.split_index + 1) * l.out_channels));
        break;
      }
      case LayerKind::ElementwiseMul:
        y = mul(input_of(l, 0), input_of(l, 1));
        break;
    }
    if (opt.masks && sites.count(l.name)) {
      const int gi = g.group_of_output(l.name);
      auto it = opt.masks->find(g.groups[static_cast<std::size_t>(gi)].id);
      if (it != opt.masks->end()) y = mul(y, it->second);
    }
    values.emplace(l.name, y);
  }

  std::vector<Tensor<T>> outs;
  for (const std::string& name : g.outputs) outs.push_back(values.at(name));
  ForwardResult<T> res;
  res.estimates = crop_or_pad_time(concat_channels(outs), T_in);
  res.params = std::move(params);
  return res;
}

// Tape leaves for one audio batch (mixture and stacked references).
template <class T>
struct BatchTensors {
  Tensor<T> mixture;     // [B,1,T]
  Tensor<T> references;  // [B,C,T]
};

template <class T>
BatchTensors<T> batch_to_tensors(Tape<T>& tape, const AudioBatch& b) {
  std::vector<T> mix(b.mixture.begin(), b.mixture.end());
  std::vector<T> refs(b.sources.begin(), b.sources.end());
  BatchTensors<T> out;
  out.mixture = tape.leaf({b.batch, 1, b.samples}, std::move(mix));
  out.references = tape.leaf({b.batch, b.speakers, b.samples}, std::move(refs));
  return out;
}

}  // namespace sepprune
