#include "sepprune/masks.hpp"

#include <zlib.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "sepprune/forward.hpp"
#include "sepprune/loss.hpp"

namespace sepprune {

MaskSet init_masks(const ModelGraph& model, double epsilon, double tau,
                   std::uint64_t seed) {
  if (epsilon <= 0.0 || epsilon >= 1.0)
    throw InvalidArgumentError("init_masks: epsilon must be in (0,1)");
  if (tau <= 0.0) throw InvalidArgumentError("init_masks: tau must be > 0");
  const auto groups = model.prunable_groups();
  if (groups.empty())
    throw InvalidArgumentError("init_masks: model has no prunable groups");

  MaskSet ms;
  ms.epsilon = epsilon;
  ms.tau = TauSchedule{tau, tau};
  ms.seed = seed;
  for (const DependencyGroup* g : groups) {
    GumbelChannelMask m;
    m.group_id = g->id;
    m.channels = g->channels;
    m.epsilon = epsilon;
    m.logit_keep.assign(static_cast<std::size_t>(g->channels), 0.0f);
    m.logit_drop.assign(static_cast<std::size_t>(g->channels), 0.0f);
    m.pi.assign(static_cast<std::size_t>(g->channels), 0.5f);
    m.m.assign(static_cast<std::size_t>(g->channels), epsilon < 0.5 ? 1 : 0);
    ms.masks.emplace(g->id, std::move(m));
  }
  return ms;
}

float masked_forward_loss(const ModelGraph& model, MaskSet& masks,
                          const AudioBatch& batch, Rng& rng,
                          const MaskStepOptions& opt) {
  const auto groups = model.prunable_groups();
  if (groups.size() != masks.masks.size())
    throw InvalidArgumentError("masked_forward_loss: mask set does not cover the model");
  for (const DependencyGroup* g : groups)
    if (!masks.masks.count(g->id))
      throw InvalidArgumentError("masked_forward_loss: no mask for group '" + g->id + "'");

  Tape<float> tape;
  const bool want_grads = opt.mask_grads != nullptr || opt.param_grads != nullptr;
  tape.set_recording(want_grads);

  std::map<std::string, SampledMask<float>> sampled;
  std::map<std::string, Tensor<float>> mask_nodes;
  for (auto& [gid, gm] : masks.masks) {
    auto s = sample_soft(tape, gm, opt.tau, rng, opt.mask_grads != nullptr,
                         opt.noise_free);
    auto m = binarize_ste(s.pi, gm.epsilon);
    // Refresh the caches.
    for (int j = 0; j < gm.channels; ++j) {
      gm.pi[static_cast<std::size_t>(j)] = s.pi.values()[static_cast<std::size_t>(j)];
      gm.m[static_cast<std::size_t>(j)] =
          m.values()[static_cast<std::size_t>(j)] > 0.5f ? 1 : 0;
    }
    mask_nodes.emplace(gid, m);
    sampled.emplace(gid, std::move(s));
  }

  auto bt = batch_to_tensors<float>(tape, batch);
  ForwardOptions<float> fopt;
  fopt.masks = &mask_nodes;
  fopt.params_require_grad = opt.params_require_grad;
  auto res = run_forward(tape, model, bt.mixture, fopt);
  auto loss = pit_neg_sisdr_loss(bt.references, res.estimates);

  if (want_grads) {
    tape.backward(loss);
    if (opt.mask_grads) {
      opt.mask_grads->clear();
      for (auto& [gid, s] : sampled) {
        MaskGrad g;
        auto gk = s.keep_logits.grad();
        auto gd = s.drop_logits.grad();
        g.keep.assign(gk.begin(), gk.end());
        g.drop.assign(gd.begin(), gd.end());
        if (g.keep.empty()) g.keep.assign(static_cast<std::size_t>(masks.masks.at(gid).channels), 0.0f);
        if (g.drop.empty()) g.drop.assign(static_cast<std::size_t>(masks.masks.at(gid).channels), 0.0f);
        opt.mask_grads->emplace(gid, std::move(g));
      }
    }
    if (opt.param_grads) {
      opt.param_grads->clear();
      for (auto& [name, leaf] : res.params) {
        auto g = leaf.grad();
        std::vector<float> gv(g.begin(), g.end());
        if (gv.empty()) gv.assign(leaf.numel(), 0.0f);
        opt.param_grads->emplace(name, std::move(gv));
      }
    }
  }
  return loss.item();
}

MaskSet learn_masks(const ModelGraph& model, const MaskSet& init,
                    const DatasetManifest& split, int iterations, double lr,
                    MaskLearnStats* stats) {
  if (iterations < 0) throw InvalidArgumentError("learn_masks: iterations must be >= 0");
  if (split.utterances.empty())
    throw InvalidArgumentError("learn_masks: dataset is empty");

  MaskSet ms = init;
  Rng rng(ms.seed);
  std::vector<AudioBatch> batches;
  batches.reserve(split.utterances.size());
  for (std::size_t i = 0; i < split.utterances.size(); ++i)
    batches.push_back(materialize(split, i));

  std::map<std::string, MaskGrad> grads;
  for (int it = 0; it < iterations; ++it) {
    MaskStepOptions opt;
    opt.tau = ms.tau.at(it, iterations);
    opt.mask_grads = &grads;
    const float loss = masked_forward_loss(
        model, ms, batches[static_cast<std::size_t>(it) % batches.size()], rng, opt);
    if (stats) stats->losses.push_back(loss);
    for (auto& [gid, gm] : ms.masks) {
      const MaskGrad& g = grads.at(gid);
      for (int j = 0; j < gm.channels; ++j) {
        gm.logit_keep[static_cast<std::size_t>(j)] -=
            static_cast<float>(lr) * g.keep[static_cast<std::size_t>(j)];
        gm.logit_drop[static_cast<std::size_t>(j)] -=
            static_cast<float>(lr) * g.drop[static_cast<std::size_t>(j)];
      }
    }
  }

  // Noise-free readout into the caches.
  for (auto& [gid, gm] : ms.masks) {
    for (int j = 0; j < gm.channels; ++j) {
      const double d = (static_cast<double>(gm.logit_keep[static_cast<std::size_t>(j)]) -
                        gm.logit_drop[static_cast<std::size_t>(j)]) /
                       ms.tau.end;
      const double pi = 1.0 / (1.0 + std::exp(-d));
      gm.pi[static_cast<std::size_t>(j)] = static_cast<float>(pi);
      gm.m[static_cast<std::size_t>(j)] = pi > gm.epsilon ? 1 : 0;
    }
  }
  return ms;
}

FinalMasks finalize_masks(const MaskSet& ms) { return finalize_masks(ms, ms.epsilon); }

FinalMasks finalize_masks(const MaskSet& ms, double epsilon) {
  FinalMasks out;
  out.epsilon = epsilon;
  for (const auto& [gid, gm] : ms.masks) {
    std::vector<float> pi(static_cast<std::size_t>(gm.channels));
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(gm.channels), 0);
    int kept = 0, best = 0;
    for (int j = 0; j < gm.channels; ++j) {
      const double d = (static_cast<double>(gm.logit_keep[static_cast<std::size_t>(j)]) -
                        gm.logit_drop[static_cast<std::size_t>(j)]) /
                       ms.tau.end;
      pi[static_cast<std::size_t>(j)] = static_cast<float>(1.0 / (1.0 + std::exp(-d)));
      if (pi[static_cast<std::size_t>(j)] > epsilon) {
        keep[static_cast<std::size_t>(j)] = 1;
        ++kept;
      }
      if (pi[static_cast<std::size_t>(j)] > pi[static_cast<std::size_t>(best)]) best = j;
    }
    if (kept == 0) {
      keep[static_cast<std::size_t>(best)] = 1;
      out.warnings.push_back("group " + gid +
                             ": all channels below threshold; force-keeping channel " +
                             std::to_string(best));
    }
    out.keep.emplace(gid, std::move(keep));
    out.pi.emplace(gid, std::move(pi));
  }
  return out;
}

std::map<std::string, int> kept_counts(const FinalMasks& f) {
  std::map<std::string, int> out;
  for (const auto& [gid, keep] : f.keep) {
    int n = 0;
    for (auto v : keep) n += v;
    out[gid] = n;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Mask file + logits sidecar.
// ---------------------------------------------------------------------------
namespace {

constexpr char kSidecarMagic[4] = {'S', 'E', 'P', 'L'};

void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
std::uint16_t get_u16(const std::string& s, std::size_t at) {
  if (at + 2 > s.size()) throw InvalidArgumentError("logits sidecar: truncated");
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[at]) |
                                    (static_cast<unsigned char>(s[at + 1]) << 8));
}
std::uint32_t get_u32(const std::string& s, std::size_t at) {
  if (at + 4 > s.size()) throw InvalidArgumentError("logits sidecar: truncated");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + i]);
  return v;
}

}  // namespace

void save_mask_file(const MaskSet& ms, const FinalMasks& fm, const std::string& path) {
  std::string out;
  char buf[64];
  std::snprintf(buf, sizeof buf, "epsilon %.6f\n", fm.epsilon);
  out += buf;
  for (const auto& [gid, keep] : fm.keep) {
    const auto& pi = fm.pi.at(gid);
    out += "group " + gid + " " + std::to_string(keep.size());
    std::snprintf(buf, sizeof buf, " %.6f", fm.epsilon);
    out += buf;
    out += " kept=";
    bool first = true;
    for (std::size_t j = 0; j < keep.size(); ++j)
      if (keep[j]) {
        if (!first) out += ",";
        out += std::to_string(j);
        first = false;
      }
    out += " pi=";
    for (std::size_t j = 0; j < pi.size(); ++j) {
      std::snprintf(buf, sizeof buf, j ? ",%.6f" : "%.6f", static_cast<double>(pi[j]));
      out += buf;
    }
    out += "\n";
  }
  for (const std::string& w : fm.warnings) out += "warning " + w + "\n";
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidArgumentError("save_mask_file: cannot open " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));

  // Raw logits sidecar for resuming.
  std::string side(kSidecarMagic, 4);
  put_u16(side, 1);
  put_u32(side, static_cast<std::uint32_t>(ms.masks.size()));
  for (const auto& [gid, gm] : ms.masks) {
    put_u16(side, static_cast<std::uint16_t>(gid.size()));
    side += gid;
    put_u32(side, static_cast<std::uint32_t>(gm.channels));
    for (float v : gm.logit_keep) put_u32(side, std::bit_cast<std::uint32_t>(v));
    for (float v : gm.logit_drop) put_u32(side, std::bit_cast<std::uint32_t>(v));
  }
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(side.data()), static_cast<uInt>(side.size())));
  put_u32(side, crc);
  std::ofstream sf(path + ".logits", std::ios::binary);
  if (!sf) throw InvalidArgumentError("save_mask_file: cannot open " + path + ".logits");
  sf.write(side.data(), static_cast<std::streamsize>(side.size()));
}

FinalMasks load_mask_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidArgumentError("load_mask_file: cannot open " + path);
  FinalMasks out;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream is(line);
    std::string key;
    is >> key;
    if (key == "epsilon") {
      is >> out.epsilon;
    } else if (key == "group") {
      std::string gid;
      std::size_t channels;
      double eps;
      std::string kept_field, pi_field;
      is >> gid >> channels >> eps >> kept_field >> pi_field;
      if (kept_field.rfind("kept=", 0) != 0 || pi_field.rfind("pi=", 0) != 0)
        throw InvalidArgumentError("load_mask_file: malformed group record");
      std::vector<std::uint8_t> keep(channels, 0);
      std::string idx;
      std::istringstream ks(kept_field.substr(5));
      while (std::getline(ks, idx, ','))
        if (!idx.empty()) keep.at(std::stoul(idx)) = 1;
      std::vector<float> pi;
      std::istringstream ps(pi_field.substr(3));
      while (std::getline(ps, idx, ',')) pi.push_back(std::stof(idx));
      if (pi.size() != channels)
        throw InvalidArgumentError("load_mask_file: pi count mismatch");
      out.keep.emplace(gid, std::move(keep));
      out.pi.emplace(gid, std::move(pi));
    } else if (key == "warning") {
      std::string rest;
      std::getline(is, rest);
      out.warnings.push_back(rest.empty() ? rest : rest.substr(1));
    } else if (!key.empty()) {
      throw InvalidArgumentError("load_mask_file: unknown key '" + key + "'");
    }
  }
  return out;
}

MaskSet load_logits_sidecar(const ModelGraph& model, const std::string& path,
                            double epsilon, double tau, std::uint64_t seed) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidArgumentError("load_logits_sidecar: cannot open " + path);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (s.size() < 14 || s.compare(0, 4, kSidecarMagic, 4) != 0)
    throw InvalidArgumentError("logits sidecar: bad magic");
  const auto stored = get_u32(s, s.size() - 4);
  const auto computed = static_cast<std::uint32_t>(crc32(
      0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(s.size() - 4)));
  if (stored != computed) throw InvalidArgumentError("logits sidecar: CRC mismatch");

  MaskSet ms = init_masks(model, epsilon, tau, seed);
  std::size_t at = 4;
  const std::uint16_t version = get_u16(s, at);
  at += 2;
  if (version != 1) throw InvalidArgumentError("logits sidecar: unsupported version");
  const std::uint32_t n = get_u32(s, at);
  at += 4;
  for (std::uint32_t i = 0; i < n; ++i) {
    const std::uint16_t len = get_u16(s, at);
    at += 2;
    if (at + len > s.size()) throw InvalidArgumentError("logits sidecar: truncated");
    const std::string gid = s.substr(at, len);
    at += len;
    const std::uint32_t C = get_u32(s, at);
    at += 4;
    auto it = ms.masks.find(gid);
    if (it == ms.masks.end() || it->second.channels != static_cast<int>(C))
      throw InvalidArgumentError("logits sidecar: group '" + gid +
                                 "' does not match the model");
    for (std::uint32_t j = 0; j < C; ++j, at += 4)
      it->second.logit_keep[j] = std::bit_cast<float>(get_u32(s, at));
    for (std::uint32_t j = 0; j < C; ++j, at += 4)
      it->second.logit_drop[j] = std::bit_cast<float>(get_u32(s, at));
  }
  return ms;
}

}  // namespace sepprune
