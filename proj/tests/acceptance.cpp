// Acceptance suite: one pass/fail line per criterion. Exit 0 iff all pass.
//
// The heavy pipeline criteria share one desk-scale task: a 32/48-channel
// two-block backbone on 512 synthetic 0.5 s utterances at 8 kHz. Structural
// criteria run on the default backbone dimensions.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <numeric>
#include <vector>

#include "gradcheck.hpp"
#include "sepprune/checkpoint.hpp"
#include "sepprune/forward.hpp"
#include "sepprune/loss.hpp"
#include "sepprune/masks.hpp"
#include "sepprune/metrics.hpp"
#include "sepprune/profiler.hpp"
#include "sepprune/pruner.hpp"
#include "sepprune/train.hpp"

using namespace sepprune;

namespace {

int g_failures = 0;

void report(int idx, bool pass, const std::string& what, const std::string& detail) {
  std::printf("%s  %2d. %s (%s)\n", pass ? "PASS" : "FAIL", idx, what.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

void report_extra(bool pass, const std::string& what, const std::string& detail) {
  std::printf("%s   +. %s (%s)\n", pass ? "PASS" : "FAIL", what.c_str(), detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// Criterion 1: finite-difference gradient suite over every op + the PIT loss.
// ---------------------------------------------------------------------------
struct FdCase {
  std::string name;
  std::function<double(const std::vector<double>&, bool, std::vector<double>*)> build;
  std::vector<double> theta;
};

double run_fd(const FdCase& c) {
  auto loss_fn = [&](const std::vector<double>& th) { return c.build(th, false, nullptr); };
  auto grad_fn = [&](const std::vector<double>& th) {
    std::vector<double> g;
    c.build(th, true, &g);
    return g;
  };
  return gradcheck::check(loss_fn, grad_fn, c.theta);
}

bool criterion_gradients(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  double worst = 0.0;
  std::string worst_name;
  int checks = 0;
  auto track = [&](const std::string& name, double err) {
    ++checks;
    if (err > worst) {
      worst = err;
      worst_name = name;
    }
  };

  // Unary + reduction ops on random [B,C,L] shapes. mode: 1 = keep away from
  // the relu kink, 2 = strictly positive domain.
  using Apply = std::function<Tensor<double>(Tape<double>&, Tensor<double>)>;
  const std::vector<std::tuple<std::string, Apply, int>> unary = {
      {"relu", [](Tape<double>&, Tensor<double> x) { return relu(x); }, 1},
      {"sigmoid", [](Tape<double>&, Tensor<double> x) { return sigmoid(x); }, 0},
      {"log", [](Tape<double>&, Tensor<double> x) { return sepprune::log(x); }, 2},
      {"exp", [](Tape<double>&, Tensor<double> x) { return sepprune::exp(x); }, 0},
      {"square", [](Tape<double>&, Tensor<double> x) { return square(x); }, 0},
      {"sqrt", [](Tape<double>&, Tensor<double> x) { return sepprune::sqrt(x); }, 2},
      {"scalar_mul", [](Tape<double>&, Tensor<double> x) { return scalar_mul(x, 1.7); }, 0},
      {"sum", [](Tape<double>&, Tensor<double> x) { return sum(x); }, 0},
      {"mean", [](Tape<double>&, Tensor<double> x) { return mean(x); }, 0},
  };
  for (const auto& [name, apply, mode] : unary) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      Rng rng(seed * 31 + 1);
      Shape sh{1 + static_cast<int>(rng.uniform_index(2)),
               1 + static_cast<int>(rng.uniform_index(8)),
               2 + static_cast<int>(rng.uniform_index(31))};
      auto xv = gradcheck::random_vec(shape_numel(sh), rng);
      if (mode == 1)
        for (auto& v : xv) v += v < 0 ? -0.06 : 0.06;
      if (mode == 2)
        for (auto& v : xv) v = 0.1 + std::fabs(v);
      std::vector<double> rv;
      FdCase c;
      c.name = name;
      c.theta = xv;
      c.build = [&, apply = apply](const std::vector<double>& th, bool want,
                                   std::vector<double>* gout) {
        Tape<double> tape;
        tape.set_recording(want);
        auto x = tape.leaf(sh, th, want);
        auto y = apply(tape, x);
        if (rv.empty()) {
          Rng prng(seed + 7);
          rv = gradcheck::random_vec(y.numel(), prng);
        }
        auto loss = sum(mul(y, tape.leaf(y.shape(), rv)));
        if (want) {
          tape.backward(loss);
          *gout = std::vector<double>(x.grad().begin(), x.grad().end());
        }
        return loss.item();
      };
      c.build(xv, false, nullptr);  // size the probe
      track(name, run_fd(c));
    }
  }

  // Binary ops across the three broadcast modes.
  for (int which = 0; which < 3; ++which) {
    for (int mode = 0; mode < 3; ++mode) {
      for (std::uint64_t seed = 0; seed < 10; ++seed) {
        Rng rng(seed * 77 + static_cast<std::uint64_t>(which * 13 + mode));
        Shape sh{1 + static_cast<int>(rng.uniform_index(2)),
                 1 + static_cast<int>(rng.uniform_index(8)),
                 2 + static_cast<int>(rng.uniform_index(31))};
        const std::size_t n = shape_numel(sh);
        Shape shb = mode == 0 ? sh : mode == 1 ? Shape{sh[1]} : Shape{1};
        auto av = gradcheck::random_vec(n, rng);
        auto bv = gradcheck::random_vec(shape_numel(shb), rng);
        auto rv = gradcheck::random_vec(n, rng);
        std::vector<double> theta = av;
        theta.insert(theta.end(), bv.begin(), bv.end());
        FdCase c;
        c.name = which == 0 ? "add" : which == 1 ? "sub" : "mul";
        c.theta = theta;
        c.build = [&, which](const std::vector<double>& th, bool want,
                             std::vector<double>* gout) {
          Tape<double> tape;
          tape.set_recording(want);
          auto a = tape.leaf(sh, {th.begin(), th.begin() + static_cast<long>(n)}, want);
          auto b = tape.leaf(shb, {th.begin() + static_cast<long>(n), th.end()}, want);
          Tensor<double> y = which == 0 ? add(a, b) : which == 1 ? sub(a, b) : mul(a, b);
          auto loss = sum(mul(y, tape.leaf(y.shape(), rv)));
          if (want) {
            tape.backward(loss);
            gout->assign(a.grad().begin(), a.grad().end());
            gout->insert(gout->end(), b.grad().begin(), b.grad().end());
          }
          return loss.item();
        };
        track(c.name, run_fd(c));
      }
    }
  }

  // conv1d over input+weight+bias.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 11);
    const int B = 1, Cin = 2, Cout = 3, K = 3, L = 14;
    ConvSpec spec;
    spec.stride = 1 + static_cast<int>(rng.uniform_index(2));
    spec.dilation = 1 + static_cast<int>(rng.uniform_index(2));
    spec.padding = static_cast<int>(rng.uniform_index(3));
    const int Lout = conv1d_out_len(L, K, spec);
    if (Lout < 1) continue;
    auto xv = gradcheck::random_vec(static_cast<std::size_t>(B) * Cin * L, rng);
    auto wv = gradcheck::random_vec(static_cast<std::size_t>(Cout) * Cin * K, rng);
    auto bv = gradcheck::random_vec(Cout, rng);
    auto rv = gradcheck::random_vec(static_cast<std::size_t>(B) * Cout * Lout, rng);
    std::vector<double> theta = xv;
    theta.insert(theta.end(), wv.begin(), wv.end());
    theta.insert(theta.end(), bv.begin(), bv.end());
    FdCase c;
    c.name = "conv1d";
    c.theta = theta;
    c.build = [&, spec](const std::vector<double>& th, bool want, std::vector<double>* gout) {
      Tape<double> tape;
      tape.set_recording(want);
      auto x = tape.leaf({B, Cin, L},
                         {th.begin(), th.begin() + static_cast<long>(xv.size())}, want);
      auto w = tape.leaf({Cout, Cin, K},
                         {th.begin() + static_cast<long>(xv.size()),
                          th.begin() + static_cast<long>(xv.size() + wv.size())},
                         want);
      auto b = tape.leaf({Cout},
                         {th.begin() + static_cast<long>(xv.size() + wv.size()), th.end()},
                         want);
      auto y = conv1d(x, w, b, spec);
      auto loss = sum(mul(y, tape.leaf(y.shape(), rv)));
      if (want) {
        tape.backward(loss);
        gout->assign(x.grad().begin(), x.grad().end());
        gout->insert(gout->end(), w.grad().begin(), w.grad().end());
        gout->insert(gout->end(), b.grad().begin(), b.grad().end());
      }
      return loss.item();
    };
    track("conv1d", run_fd(c));
  }

  // conv_transpose1d over input+weight.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 212);
    const int B = 1, Cin = 3, Cout = 2, K = 4, L = 9;
    const int stride = 1 + static_cast<int>(rng.uniform_index(3));
    const int padding = static_cast<int>(rng.uniform_index(2));
    const int Lout = conv_transpose1d_out_len(L, K, stride, padding);
    auto xv = gradcheck::random_vec(static_cast<std::size_t>(B) * Cin * L, rng);
    auto wv = gradcheck::random_vec(static_cast<std::size_t>(Cin) * Cout * K, rng);
    auto rv = gradcheck::random_vec(static_cast<std::size_t>(B) * Cout * Lout, rng);
    std::vector<double> theta = xv;
    theta.insert(theta.end(), wv.begin(), wv.end());
    FdCase c;
    c.name = "conv_transpose1d";
    c.theta = theta;
    c.build = [&, stride, padding](const std::vector<double>& th, bool want,
                                   std::vector<double>* gout) {
      Tape<double> tape;
      tape.set_recording(want);
      auto x = tape.leaf({B, Cin, L},
                         {th.begin(), th.begin() + static_cast<long>(xv.size())}, want);
      auto w = tape.leaf({Cin, Cout, K},
                         {th.begin() + static_cast<long>(xv.size()), th.end()}, want);
      auto y = conv_transpose1d(x, w, std::nullopt, stride, padding);
      auto loss = sum(mul(y, tape.leaf(y.shape(), rv)));
      if (want) {
        tape.backward(loss);
        gout->assign(x.grad().begin(), x.grad().end());
        gout->insert(gout->end(), w.grad().begin(), w.grad().end());
      }
      return loss.item();
    };
    track("conv_transpose1d", run_fd(c));
  }

  // prelu -> channel_norm composition over all four parameter tensors.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 99);
    const int B = 1, C = 4, L = 10;
    auto xv = gradcheck::random_vec(static_cast<std::size_t>(B) * C * L, rng);
    for (auto& v : xv) v += v < 0 ? -0.06 : 0.06;
    auto sv = gradcheck::random_vec(C, rng);
    auto gv = gradcheck::random_vec(C, rng);
    auto bv = gradcheck::random_vec(C, rng);
    auto rv = gradcheck::random_vec(xv.size(), rng);
    std::vector<double> theta = xv;
    theta.insert(theta.end(), sv.begin(), sv.end());
    theta.insert(theta.end(), gv.begin(), gv.end());
    theta.insert(theta.end(), bv.begin(), bv.end());
    FdCase c;
    c.name = "prelu+channel_norm";
    c.theta = theta;
    c.build = [&](const std::vector<double>& th, bool want, std::vector<double>* gout) {
      Tape<double> tape;
      tape.set_recording(want);
      std::size_t at = 0;
      auto take = [&](Shape sh, std::size_t n) {
        auto t = tape.leaf(std::move(sh),
                           {th.begin() + static_cast<long>(at),
                            th.begin() + static_cast<long>(at + n)},
                           want);
        at += n;
        return t;
      };
      auto x = take({B, C, L}, xv.size());
      auto s = take({C}, C);
      auto gn = take({C}, C);
      auto bn = take({C}, C);
      auto y = channel_norm(prelu(x, s), gn, bn);
      auto loss = sum(mul(y, tape.leaf(y.shape(), rv)));
      if (want) {
        tape.backward(loss);
        gout->clear();
        for (const auto* t : {&x, &s, &gn, &bn})
          gout->insert(gout->end(), t->grad().begin(), t->grad().end());
      }
      return loss.item();
    };
    track("prelu+channel_norm", run_fd(c));
  }

  // Composed PIT negative SI-SDR loss.
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed + 1000);
    const int B = 1, C = 2, T = 32;
    auto refs = gradcheck::random_vec(static_cast<std::size_t>(B) * C * T, rng);
    auto ests = gradcheck::random_vec(static_cast<std::size_t>(B) * C * T, rng);
    FdCase c;
    c.name = "pit_neg_sisdr_loss";
    c.theta = ests;
    c.build = [&](const std::vector<double>& th, bool want, std::vector<double>* gout) {
      Tape<double> tape;
      tape.set_recording(want);
      auto r = tape.leaf({B, C, T}, refs);
      auto e = tape.leaf({B, C, T}, th, want);
      auto loss = pit_neg_sisdr_loss(r, e);
      if (want) {
        tape.backward(loss);
        *gout = std::vector<double>(e.grad().begin(), e.grad().end());
      }
      return loss.item();
    };
    track("pit_neg_sisdr_loss", run_fd(c));
  }

  const double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf, "%d checks, worst rel err %.2e in %s, %.1f s", checks,
                worst, worst_name.c_str(), secs);
  detail = buf;
  return worst < 1e-4 && secs < 120.0;
}

// ---------------------------------------------------------------------------
// Criterion 2: pruning-equivalence theorem on the default backbone.
// ---------------------------------------------------------------------------
FinalMasks random_binary_masks(const ModelGraph& g, std::uint64_t seed) {
  Rng rng(seed);
  FinalMasks fm;
  for (const auto* grp : g.prunable_groups()) {
    std::vector<std::uint8_t> keep(static_cast<std::size_t>(grp->channels), 0);
    int kept = 0;
    for (auto& v : keep) {
      v = rng.uniform() < 0.6 ? 1 : 0;
      kept += v;
    }
    if (kept == 0) keep[rng.uniform_index(keep.size())] = 1;
    fm.pi[grp->id].assign(keep.size(), 0.0f);
    fm.keep.emplace(grp->id, std::move(keep));
  }
  return fm;
}

template <class T>
std::vector<T> forward_once(const ModelGraph& g, const std::vector<T>& mix,
                            const FinalMasks* masks) {
  Tape<T> tape;
  tape.set_recording(false);
  auto m = tape.leaf({1, 1, static_cast<int>(mix.size())}, mix);
  std::map<std::string, Tensor<T>> nodes;
  ForwardOptions<T> opt;
  if (masks) {
    for (const auto& [gid, keep] : masks->keep) {
      std::vector<T> v(keep.size());
      for (std::size_t j = 0; j < keep.size(); ++j) v[j] = keep[j] ? T(1) : T(0);
      nodes.emplace(gid, tape.leaf({static_cast<int>(keep.size())}, std::move(v)));
    }
    opt.masks = &nodes;
  }
  auto est = run_forward(tape, g, m, opt).estimates;
  return std::vector<T>(est.values().begin(), est.values().end());
}

bool criterion_equivalence(std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  auto g = build_toy_sepnet(ToySepNetConfig{});  // default backbone dimensions
  const int T = 1600;
  Rng rng(77);
  std::vector<double> mix64(T);
  for (auto& v : mix64) v = rng.uniform(-0.9, 0.9);
  std::vector<float> mix32(mix64.begin(), mix64.end());

  double worst64 = 0.0;
  float worst32_rel = 0.0f;
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    auto fm = random_binary_masks(g, seed + 1);
    auto pruned = apply_prune(g, blueprint_from_masks(g, fm));
    auto masked = forward_once<double>(g, mix64, &fm);
    auto slim = forward_once<double>(pruned, mix64, nullptr);
    for (std::size_t i = 0; i < masked.size(); ++i)
      worst64 = std::max(worst64, std::fabs(masked[i] - slim[i]));
    if (seed < 20) {
      auto masked32 = forward_once<float>(g, mix32, &fm);
      auto slim32 = forward_once<float>(pruned, mix32, nullptr);
      float scale = 1e-6f;
      for (float v : masked32) scale = std::max(scale, std::fabs(v));
      for (std::size_t i = 0; i < masked32.size(); ++i)
        worst32_rel = std::max(worst32_rel, std::fabs(masked32[i] - slim32[i]) / scale);
    }
  }
  const double secs = seconds_since(t0);
  char buf[160];
  std::snprintf(buf, sizeof buf,
                "100 masks, 64-bit max abs diff %.1e, 32-bit max rel %.1e, %.1f s",
                worst64, static_cast<double>(worst32_rel), secs);
  detail = buf;
  return worst64 == 0.0 && worst32_rel <= 1e-5f && secs < 120.0;
}

// ---------------------------------------------------------------------------
// Criterion 3: profiler exactness (closed form + pruned recomputation).
// ---------------------------------------------------------------------------
bool criterion_profiler(std::string& detail) {
  ToySepNetConfig cfg;
  auto g = build_toy_sepnet(cfg);
  const auto rep = profile(g, 16000);
  const long long E = cfg.encoder_channels, H = cfg.block_channels;
  const long long R = cfg.blocks, K = cfg.kernel, C = cfg.speakers;
  const long long Ke = cfg.encoder_kernel;
  long long want = E * Ke + E;                       // encoder
  want += R * (H * E + H + H * K + H + 2 * H + H + E * H + E);  // blocks
  want += E * (C * E) + C * E;                       // mask head
  want += E * Ke + 1;                                // shared decoder
  bool ok = rep.total.params == want;
  ok = ok && rep.param_ratio(Component::Separator) > 0.80;
  ok = ok && heaviest_component(rep) == Component::Separator;

  // Pruned profiling must equal the same closed form on kept counts.
  auto fm = random_binary_masks(g, 5);
  auto bp = blueprint_from_masks(g, fm);
  const auto prep = profile(apply_prune(g, bp), 16000);
  const long long Ek = static_cast<long long>(bp.group_kept.at("sep.chain").size());
  long long want_pruned = Ek * Ke + Ek;
  for (int r = 0; r < cfg.blocks; ++r) {
    const long long Hk = static_cast<long long>(
        bp.group_kept.at("sep.blk" + std::to_string(r) + ".h").size());
    want_pruned += Hk * Ek + Hk + Hk * K + Hk + 2 * Hk + Hk + Ek * Hk + Ek;
  }
  want_pruned += Ek * (C * Ek) + C * Ek;
  want_pruned += Ek * Ke + 1;
  ok = ok && prep.total.params == want_pruned;

  char buf[160];
  std::snprintf(buf, sizeof buf,
                "defaults %lld params (closed form %lld), pruned %lld (closed form %lld)",
                rep.total.params, want, prep.total.params, want_pruned);
  detail = buf;
  return ok;
}

// ---------------------------------------------------------------------------
// Criterion 4: Gumbel sampling law.
// ---------------------------------------------------------------------------
bool criterion_sampling_law(std::string& detail) {
  Rng setting_rng(2024);
  double worst = 0.0;
  for (int setting = 0; setting < 5; ++setting) {
    const int C = 6;
    GumbelChannelMask gm;
    gm.group_id = "g";
    gm.channels = C;
    for (int j = 0; j < C; ++j) {
      gm.logit_keep.push_back(static_cast<float>(setting_rng.uniform(-1.5, 1.5)));
      gm.logit_drop.push_back(static_cast<float>(setting_rng.uniform(-1.5, 1.5)));
    }
    Rng rng(3000 + static_cast<std::uint64_t>(setting));
    const int N = 100000;
    std::vector<int> kept(C, 0);
    Tape<float> tape;
    tape.set_recording(false);
    for (int i = 0; i < N; ++i) {
      auto s = sample_soft(tape, gm, 1.0, rng, false);
      for (int j = 0; j < C; ++j)
        if (s.pi.values()[static_cast<std::size_t>(j)] > 0.5f)
          ++kept[static_cast<std::size_t>(j)];
      if (tape.num_nodes() > 4096) tape.clear();
    }
    for (int j = 0; j < C; ++j) {
      const double want =
          1.0 / (1.0 + std::exp(-(gm.logit_keep[static_cast<std::size_t>(j)] -
                                  gm.logit_drop[static_cast<std::size_t>(j)])));
      worst = std::max(
          worst,
          std::fabs(static_cast<double>(kept[static_cast<std::size_t>(j)]) / N - want));
    }
  }
  char buf[96];
  std::snprintf(buf, sizeof buf, "5 settings x 1e5 draws, worst |freq - softmax| = %.4f",
                worst);
  detail = buf;
  return worst < 0.01;
}

// ---------------------------------------------------------------------------
// Criterion 5: STE contract, element-exact.
// ---------------------------------------------------------------------------
bool criterion_ste(std::string& detail) {
  Rng rng(555);
  int checked = 0;
  for (int trial = 0; trial < 50; ++trial) {
    const int C = 32;
    std::vector<float> piv(C), up(C);
    for (auto& v : piv) v = static_cast<float>(rng.uniform(0.01, 0.99));
    for (auto& v : up) v = static_cast<float>(rng.uniform(-5.0, 5.0));
    Tape<float> tape;
    auto pi = tape.leaf({C}, piv, true);
    auto m = binarize_ste(pi, 0.7);
    tape.backward(sum(mul(m, tape.leaf({C}, up))));
    for (int j = 0; j < C; ++j) {
      if (pi.grad()[static_cast<std::size_t>(j)] !=
          std::clamp(up[static_cast<std::size_t>(j)], -1.0f, 1.0f)) {
        detail = "gradient mismatch at trial " + std::to_string(trial);
        return false;
      }
      ++checked;
    }
  }
  detail = std::to_string(checked) + " elements element-exact";
  return true;
}

// ---------------------------------------------------------------------------
// Criterion 6: threshold monotonicity on fixed logits.
// ---------------------------------------------------------------------------
bool criterion_monotonicity(std::string& detail) {
  ToySepNetConfig cfg;
  cfg.encoder_channels = 16;
  cfg.block_channels = 24;
  cfg.blocks = 2;
  auto g = build_toy_sepnet(cfg);
  bool ok = true;
  std::string counts;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    auto ms = init_masks(g, 0.7, 1.0, seed);
    Rng rng(seed + 40);
    for (auto& [gid, gm] : ms.masks)
      for (auto& v : gm.logit_keep) v = static_cast<float>(rng.uniform(-2.0, 2.0));
    int prev = -1;
    for (double eps : {0.5, 0.6, 0.7, 0.8, 0.9}) {
      auto fm = finalize_masks(ms, eps);
      int total = 0;
      for (const auto& [gid, n] : kept_counts(fm)) total += n;
      if (prev >= 0 && total > prev) ok = false;
      prev = total;
      if (seed == 0) counts += (counts.empty() ? "" : ",") + std::to_string(total);
    }
  }
  detail = "kept over eps 0.5..0.9: " + counts + " (5 seeds)";
  return ok;
}

// ---------------------------------------------------------------------------
// Shared desk-scale pipeline for criteria 7-12 and the extra properties.
// ---------------------------------------------------------------------------
struct Pipeline {
  ToySepNetConfig model_cfg;
  DatasetSplits data;
  ModelGraph pretrained;
  double pretrain_val = 0.0;
  double full_test_sisdri = 0.0;
  TrainConfig ft_cfg;

  std::vector<double> sep_scores;  // post-finetune SI-SDRi per learner seed
  std::vector<std::map<std::string, int>> sep_counts;
  std::map<std::string, int> matched_counts;  // seed-0 kept counts
  double random_mean = 0.0;
  double pipeline_seconds = 0.0;
};

Pipeline build_pipeline() {
  Pipeline p;
  p.model_cfg.encoder_channels = 32;
  p.model_cfg.block_channels = 48;
  p.model_cfg.blocks = 2;

  DatasetConfig dc;
  dc.n_train = 512;
  dc.n_val = 64;
  dc.n_test = 64;
  dc.synth.samples = 4000;
  p.data = make_dataset(dc);

  TrainConfig tc;
  tc.max_epochs = 16;
  tc.seed = 7;
  const auto t0 = std::chrono::steady_clock::now();
  auto r = train(build_toy_sepnet(p.model_cfg), p.data, tc);
  p.pretrained = r.model;
  p.pretrain_val = r.best_val_sisdri;
  p.full_test_sisdri = evaluate(p.pretrained, p.data.test, "full").mean_si_sdr_i;
  p.ft_cfg = tc;
  p.pipeline_seconds = seconds_since(t0);
  return p;
}

double pruned_finetuned_score(Pipeline& p, const FinalMasks& fm) {
  auto pruned = apply_prune(p.pretrained, blueprint_from_masks(p.pretrained, fm));
  auto r = finetune(pruned, p.data, p.ft_cfg, 1);
  return evaluate(r.model, p.data.test, "arm").mean_si_sdr_i;
}

bool criterion_mask_quality(Pipeline& p, std::string& detail) {
  const auto t0 = std::chrono::steady_clock::now();
  const int n_seeds = 20;
  for (std::uint64_t seed = 0; seed < n_seeds; ++seed) {
    auto ms = init_masks(p.pretrained, 0.7, 1.0, seed);
    ms = learn_masks(p.pretrained, ms, p.data.train, 500, 0.1);
    auto fm = finalize_masks(ms);
    p.sep_counts.push_back(kept_counts(fm));
    p.sep_scores.push_back(pruned_finetuned_score(p, fm));
  }
  p.matched_counts = p.sep_counts[0];

  double random_sum = 0.0;
  for (std::uint64_t j = 0; j < 20; ++j) {
    auto fm = random_mask_with_counts(p.pretrained, p.matched_counts, 10000 + j);
    random_sum += pruned_finetuned_score(p, fm);
  }
  p.random_mean = random_sum / 20.0;

  int wins = 0;
  for (double s : p.sep_scores) wins += s > p.random_mean;
  p.pipeline_seconds += seconds_since(t0);
  char buf[200];
  std::snprintf(buf, sizeof buf,
                "wins %d/20 vs random mean %.2f dB (learned mean %.2f dB), stage %.0f s",
                wins, p.random_mean,
                std::accumulate(p.sep_scores.begin(), p.sep_scores.end(), 0.0) / n_seeds,
                p.pipeline_seconds);
  detail = buf;
  return wins >= 18 && p.pipeline_seconds < 1800.0;
}

bool criterion_fast_recovery(Pipeline& p, std::string& detail) {
  int wins = 0;
  std::string scores;
  for (int s = 0; s < 5; ++s) {
    const double frac = p.sep_scores[static_cast<std::size_t>(s)] / p.full_test_sisdri;
    wins += frac >= 0.70;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%.0f%%", s ? "," : "", 100.0 * frac);
    scores += buf;
  }
  char buf[160];
  std::snprintf(buf, sizeof buf, "recovery %s of full %.2f dB, wins %d/5", scores.c_str(),
                p.full_test_sisdri, wins);
  detail = buf;
  return wins >= 4;
}

bool criterion_scratch(Pipeline& p, std::string& detail) {
  int wins = 0;
  for (int s = 0; s < 5; ++s) {
    // Same shape as seed s's pruned model, fresh random weights, 1 epoch.
    auto fm = random_mask_with_counts(p.pretrained,
                                      p.sep_counts[static_cast<std::size_t>(s)],
                                      777 + static_cast<std::uint64_t>(s));
    auto scratch = apply_prune(p.pretrained, blueprint_from_masks(p.pretrained, fm));
    reinitialize_parameters(scratch, 9000 + static_cast<std::uint64_t>(s));
    auto r = finetune(scratch, p.data, p.ft_cfg, 1);
    const double scratch_score = evaluate(r.model, p.data.test, "scratch").mean_si_sdr_i;
    wins += p.sep_scores[static_cast<std::size_t>(s)] > scratch_score;
  }
  detail = "pruned+1ep beats scratch+1ep in " + std::to_string(wins) + "/5 seeds";
  return wins >= 4;
}

bool criterion_joint(Pipeline& p, std::string& detail) {
  int wins = 0;
  std::string gaps;
  for (int s = 0; s < 5; ++s) {
    auto ms = init_masks(p.pretrained, 0.7, 1.0, static_cast<std::uint64_t>(s));
    auto jr = joint_optimize(p.pretrained, ms, p.data.train, 500, 0.1, 0.001);
    auto fm = finalize_masks(jr.masks);
    auto pruned = apply_prune(jr.model, blueprint_from_masks(jr.model, fm));
    auto r = finetune(pruned, p.data, p.ft_cfg, 1);
    const double joint_score = evaluate(r.model, p.data.test, "joint").mean_si_sdr_i;
    const double step_score = p.sep_scores[static_cast<std::size_t>(s)];
    wins += step_score >= joint_score;
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%+.2f", s ? "," : "", step_score - joint_score);
    gaps += buf;
  }
  detail = "stepwise minus joint (dB): " + gaps + ", wins " + std::to_string(wins) + "/5";
  return wins >= 4;
}

bool criterion_timing(Pipeline& p, std::string& detail) {
  auto fm = random_mask_with_counts(p.pretrained, p.matched_counts, 4242);
  auto pruned = apply_prune(p.pretrained, blueprint_from_masks(p.pretrained, fm));
  const double full_ms = timing_harness_ms(p.pretrained, 4000, 1000);
  const double slim_ms = timing_harness_ms(pruned, 4000, 1000);
  char buf[96];
  std::snprintf(buf, sizeof buf, "full %.3f ms vs pruned %.3f ms over 1000 runs", full_ms,
                slim_ms);
  detail = buf;
  return slim_ms <= full_ms;
}

bool criterion_determinism(Pipeline& p, std::string& detail) {
  namespace fs = std::filesystem;
  const fs::path dir = fs::temp_directory_path() / "sepprune_acceptance";
  fs::create_directories(dir);
  auto read_bytes = [](const fs::path& path) {
    std::ifstream f(path, std::ios::binary);
    return std::string((std::istreambuf_iterator<char>(f)),
                       std::istreambuf_iterator<char>());
  };

  // Mask files byte-for-byte across two identical runs.
  DatasetManifest small = p.data.val;
  small.utterances.resize(16);
  std::string a_bytes, b_bytes;
  for (int run = 0; run < 2; ++run) {
    auto ms = init_masks(p.pretrained, 0.7, 1.0, 99);
    ms = learn_masks(p.pretrained, ms, small, 50, 0.1);
    const fs::path path = dir / ("masks_run" + std::to_string(run) + ".txt");
    save_mask_file(ms, finalize_masks(ms), path.string());
    (run == 0 ? a_bytes : b_bytes) =
        read_bytes(path) + read_bytes(path.string() + ".logits");
  }
  bool ok = a_bytes == b_bytes;

  // Training logs byte-for-byte.
  DatasetSplits mini;
  mini.train = small;
  mini.val = p.data.val;
  mini.val.utterances.resize(8);
  mini.test = mini.val;
  TrainConfig tc;
  tc.max_epochs = 2;
  tc.seed = 31;
  auto r1 = train(build_toy_sepnet(p.model_cfg), mini, tc);
  auto r2 = train(build_toy_sepnet(p.model_cfg), mini, tc);
  ok = ok && training_log_csv(r1.log) == training_log_csv(r2.log);
  detail = ok ? "mask files and training logs byte-identical" : "byte mismatch";
  return ok;
}

bool property_iteration_insensitivity(Pipeline& p, std::string& detail) {
  int total_prunable = 0;
  for (const auto* grp : p.pretrained.prunable_groups()) total_prunable += grp->channels;
  int good = 0;
  std::string spreads;
  for (std::uint64_t seed = 0; seed < 5; ++seed) {
    int lo = 1 << 30, hi = 0;
    for (int iters : {300, 500, 900}) {
      auto ms = init_masks(p.pretrained, 0.7, 1.0, seed);
      ms = learn_masks(p.pretrained, ms, p.data.train, iters, 0.1);
      int kept = 0;
      for (const auto& [gid, n] : kept_counts(finalize_masks(ms))) kept += n;
      lo = std::min(lo, kept);
      hi = std::max(hi, kept);
    }
    const double spread = static_cast<double>(hi - lo) / total_prunable;
    good += spread <= 0.10;
    char buf[16];
    std::snprintf(buf, sizeof buf, "%s%.0f%%", seed ? "," : "", 100.0 * spread);
    spreads += buf;
  }
  detail = "kept-count spread over {300,500,900} iters: " + spreads + " of " +
           std::to_string(total_prunable) + " prunable";
  return good >= 4;
}

}  // namespace

int main() {
  std::printf("sepprune acceptance suite\n");
  std::printf("-------------------------\n");
  std::string d;

  bool ok = criterion_gradients(d);
  report(1, ok, "gradient suite: ops + PIT loss vs central differences", d);

  ok = criterion_equivalence(d);
  report(2, ok, "pruning-equivalence theorem over 100 random masks", d);

  ok = criterion_profiler(d);
  report(3, ok, "profiler exactness vs closed-form counts", d);

  ok = criterion_sampling_law(d);
  report(4, ok, "Gumbel sampling law within +/-0.01", d);

  ok = criterion_ste(d);
  report(5, ok, "STE backward equals clamped upstream gradient", d);

  ok = criterion_monotonicity(d);
  report(6, ok, "kept count non-increasing over eps 0.5..0.9", d);

  Pipeline p = build_pipeline();
  std::printf("      pipeline setup: pretrain val %.2f dB, test %.2f dB (%.0f s)\n",
              p.pretrain_val, p.full_test_sisdri, p.pipeline_seconds);
  {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.2f dB", p.pretrain_val);
    report_extra(p.pretrain_val > 5.0, "pretraining oracle: val SI-SDRi > 5 dB", buf);
  }

  ok = criterion_mask_quality(p, d);
  report(7, ok, "learned masks beat matched random masks in >= 18/20 seeds", d);

  ok = criterion_fast_recovery(p, d);
  report(8, ok, "pruned + 1 finetune epoch recovers >= 70% in >= 4/5 seeds", d);

  ok = criterion_scratch(p, d);
  report(9, ok, "pruned + 1 epoch beats equal-size scratch + 1 epoch in >= 4/5", d);

  ok = criterion_joint(p, d);
  report(10, ok, "step-by-step >= joint optimization in >= 4/5 paired seeds", d);

  ok = criterion_timing(p, d);
  report(11, ok, "pruned mean forward time <= original over 1000 runs", d);

  ok = criterion_determinism(p, d);
  report(12, ok, "byte-for-byte reproducibility of masks and logs", d);

  ok = property_iteration_insensitivity(p, d);
  report_extra(ok, "iteration insensitivity over {300,500,900}", d);

  std::printf("-------------------------\n");
  std::printf("%s (%d failure%s)\n",
              g_failures == 0 ? "ALL CRITERIA PASSED" : "FAILURES", g_failures,
              g_failures == 1 ? "" : "s");
  return g_failures == 0 ? 0 : 1;
}
