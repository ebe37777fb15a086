#include "sepprune/profiler.hpp"

#include <chrono>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <map>
#include <set>

#include "sepprune/data.hpp"
#include "sepprune/error.hpp"
#include "sepprune/forward.hpp"
#include "sepprune/loss.hpp"

namespace sepprune {

const ComponentTotals& ProfileReport::component(Component c) const {
  switch (c) {
    case Component::Encoder: return encoder;
    case Component::Separator: return separator;
    default: return decoder;
  }
}

double ProfileReport::param_ratio(Component c) const {
  return total.params ? static_cast<double>(component(c).params) / total.params : 0.0;
}

double ProfileReport::macs_ratio(Component c) const {
  return total.macs ? static_cast<double>(component(c).macs) / total.macs : 0.0;
}

ProfileReport profile(const ModelGraph& g, int input_length_samples) {
  if (input_length_samples < 1)
    throw InvalidArgumentError("profile: input length must be >= 1");
  ProfileReport rep;
  rep.input_length = input_length_samples;

  std::map<std::string, int> lengths;  // layer -> output length
  std::set<std::string> counted_params;
  auto in_length = [&](const LayerSpec& l) {
    if (l.inputs.empty()) return input_length_samples;
    return lengths.at(l.inputs[0]);
  };

  for (const LayerSpec& l : g.layers) {
    LayerProfile row;
    row.name = l.name;
    row.kind = l.kind;
    row.component = l.component;
    const int L = in_length(l);
    long long out_len = L;
    const long long C = l.out_channels;

    switch (l.kind) {
      case LayerKind::Conv1d:
      case LayerKind::PointwiseConv: {
        ConvSpec spec{l.stride, l.dilation, l.groups, l.padding};
        out_len = conv1d_out_len(L, l.kernel, spec);
        if (out_len < 1)
          throw InvalidArgumentError("profile: layer '" + l.name + "' output length < 1");
        const long long core =
            C * (l.in_channels / l.groups) * static_cast<long long>(l.kernel);
        row.params = core + (l.has_bias() ? C : 0);
        row.macs = core * out_len;
        break;
      }
      case LayerKind::ConvTranspose1d: {
        out_len = conv_transpose1d_out_len(L, l.kernel, l.stride, l.padding);
        if (out_len < 1)
          throw InvalidArgumentError("profile: layer '" + l.name + "' output length < 1");
        const long long core = static_cast<long long>(l.in_channels) * C * l.kernel;
        row.params = core + (l.has_bias() ? C : 0);
        row.macs = core * out_len;
        break;
      }
      case LayerKind::ChannelNorm:
        row.params = 2 * C;
        row.macs = 4 * C * L;
        break;
      case LayerKind::PRelu:
        row.params = C;
        row.macs = C * L;
        break;
      case LayerKind::Relu:
      case LayerKind::AddJunction:
      case LayerKind::ElementwiseMul:
      case LayerKind::SplitMasks:
        row.params = 0;
        row.macs = C * L;
        break;
    }
    // Shared arrays count once.
    if (l.has_weight() && !counted_params.insert(l.weight_name).second) row.params = 0;
    row.out_length = static_cast<int>(out_len);
    lengths[l.name] = static_cast<int>(out_len);

    ComponentTotals& comp = l.component == Component::Encoder  ? rep.encoder
                            : l.component == Component::Separator ? rep.separator
                                                                  : rep.decoder;
    comp.params += row.params;
    comp.macs += row.macs;
    rep.total.params += row.params;
    rep.total.macs += row.macs;
    rep.layers.push_back(std::move(row));
  }
  return rep;
}

Component heaviest_component(const ProfileReport& rep) {
  Component best = Component::Encoder;
  for (Component c : {Component::Encoder, Component::Separator, Component::Decoder}) {
    const auto& cur = rep.component(c);
    const auto& top = rep.component(best);
    if (cur.macs > top.macs || (cur.macs == top.macs && cur.params > top.params))
      best = c;
  }
  return best;
}

double timing_harness_ms(const ModelGraph& g, int input_length, int runs,
                         TimingMode mode) {
  if (runs < 1) throw InvalidArgumentError("timing_harness: runs must be >= 1");
  SynthParams sp;
  sp.samples = input_length;
  const AudioBatch batch = synth_utterance(1234, sp);

  auto one_run = [&]() {
    Tape<float> tape;
    tape.set_recording(mode == TimingMode::ForwardBackward);
    auto bt = batch_to_tensors<float>(tape, batch);
    auto res = run_forward(tape, g, bt.mixture,
                           ForwardOptions<float>{nullptr, mode == TimingMode::ForwardBackward});
    if (mode == TimingMode::ForwardBackward)
      tape.backward(pit_neg_sisdr_loss(bt.references, res.estimates));
  };

  for (int i = 0; i < 10; ++i) one_run();
  const auto t0 = std::chrono::steady_clock::now();
  for (int i = 0; i < runs; ++i) one_run();
  const auto t1 = std::chrono::steady_clock::now();
  return std::chrono::duration<double, std::milli>(t1 - t0).count() / runs;
}

std::string format_count(double v) {
  char buf[64];
  if (v >= 1e9)
    std::snprintf(buf, sizeof buf, "%.2f G", v / 1e9);
  else if (v >= 1e6)
    std::snprintf(buf, sizeof buf, "%.2f M", v / 1e6);
  else if (v >= 1e3)
    std::snprintf(buf, sizeof buf, "%.2f K", v / 1e3);
  else
    std::snprintf(buf, sizeof buf, "%.0f", v);
  return buf;
}

std::string format_macs(double v) {
  char buf[64];
  if (v >= 1e9)
    std::snprintf(buf, sizeof buf, "%.2f GMac", v / 1e9);
  else if (v >= 1e6)
    std::snprintf(buf, sizeof buf, "%.2f MMac", v / 1e6);
  else if (v >= 1e3)
    std::snprintf(buf, sizeof buf, "%.2f KMac", v / 1e3);
  else
    std::snprintf(buf, sizeof buf, "%.0f Mac", v);
  return buf;
}

std::string format_ratio(double r) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f%%", r * 100.0);
  return buf;
}

std::string table1_row(const std::string& name, double total_params,
                       double total_macs, double sm_params, double sm_macs,
                       double param_ratio, double macs_ratio) {
  return name + ", " + format_count(total_params) + ", " + format_macs(total_macs) +
         ", " + format_count(sm_params) + ", " + format_macs(sm_macs) + ", " +
         format_ratio(param_ratio) + ", " + format_ratio(macs_ratio);
}

std::string report_to_csv(const ProfileReport& rep) {
  std::string out = "layer,kind,component,params,macs,out_length\n";
  for (const auto& r : rep.layers)
    out += r.name + "," + to_string(r.kind) + "," + to_string(r.component) + "," +
           std::to_string(r.params) + "," + std::to_string(r.macs) + "," +
           std::to_string(r.out_length) + "\n";
  for (Component c : {Component::Encoder, Component::Separator, Component::Decoder}) {
    const auto& t = rep.component(c);
    out += std::string(to_string(c)) + ",,total," + std::to_string(t.params) + "," +
           std::to_string(t.macs) + ",\n";
  }
  out += "total,,," + std::to_string(rep.total.params) + "," +
         std::to_string(rep.total.macs) + ",\n";
  return out;
}

std::string report_table1_csv(const ProfileReport& rep, const std::string& name) {
  std::string out =
      "Model, Total Params, Total MACs, Params of the SM, MACs of the SM, "
      "SM Parameter Ratio, SM MACs Ratio\n";
  out += table1_row(name, static_cast<double>(rep.total.params),
                    static_cast<double>(rep.total.macs),
                    static_cast<double>(rep.separator.params),
                    static_cast<double>(rep.separator.macs),
                    rep.param_ratio(Component::Separator),
                    rep.macs_ratio(Component::Separator)) +
         "\n";
  return out;
}

std::string report_to_json(const ProfileReport& rep, const std::string& name) {
  nlohmann::json j;
  j["model"] = name;
  j["input_length"] = rep.input_length;
  j["units"] = "MACs";  // absolute comparison against external GMac figures
                         // is out of scope; conventions differ per tool
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& r : rep.layers)
    layers.push_back({{"name", r.name},
                      {"kind", to_string(r.kind)},
                      {"component", to_string(r.component)},
                      {"params", r.params},
                      {"macs", r.macs},
                      {"out_length", r.out_length}});
  j["layers"] = std::move(layers);
  for (Component c : {Component::Encoder, Component::Separator, Component::Decoder}) {
    const auto& t = rep.component(c);
    j["components"][to_string(c)] = {{"params", t.params},
                                     {"macs", t.macs},
                                     {"param_ratio", rep.param_ratio(c)},
                                     {"macs_ratio", rep.macs_ratio(c)}};
  }
  j["total"] = {{"params", rep.total.params}, {"macs", rep.total.macs}};
  return j.dump(2);
}

}  // namespace sepprune
