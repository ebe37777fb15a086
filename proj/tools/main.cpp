// sepprune: end-to-end channel-pruning pipeline for toy separation models.
// Subcommands: profile, train, learn-mask, prune, finetune, eval, ablate.
// Exit codes: 0 success, 1 runtime/numeric failure, 2 usage/config error.

#include <CLI11.hpp>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <json.hpp>

#include "sepprune/checkpoint.hpp"
#include "sepprune/data.hpp"
#include "sepprune/error.hpp"
#include "sepprune/masks.hpp"
#include "sepprune/model.hpp"
#include "sepprune/profiler.hpp"
#include "sepprune/pruner.hpp"
#include "sepprune/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace sepprune;

namespace {

constexpr const char* kVersion = "sepprune 0.1.0";

struct RunConfig {
  ToySepNetConfig model;
  DatasetConfig data;
  TrainConfig train;
  double mask_epsilon = 0.7;
  double mask_tau = 1.0;
  double mask_tau_end = 1.0;
  int mask_iterations = 500;
  double mask_lr = 0.1;
  std::uint64_t mask_seed = 0;
  int finetune_epochs = 1;
  json raw;  // merged config (defaults + file), for hashing/manifests
};

void reject_unknown(const json& j, const std::set<std::string>& known,
                    const std::string& where) {
  for (const auto& [key, value] : j.items())
    if (!known.count(key))
      throw ConfigError("config: unknown key '" + key + "' in " + where);
}

RunConfig load_config(const std::string& path) {
  json j = json::object();
  if (!path.empty()) {
    std::ifstream f(path);
    if (!f) throw ConfigError("config: cannot open " + path);
    try {
      f >> j;
    } catch (const json::exception& e) {
      throw ConfigError(std::string("config: parse failure: ") + e.what());
    }
  }
  reject_unknown(j, {"model", "data", "train", "mask", "finetune_epochs"}, "top level");

  RunConfig c;
  json jm = j.value("model", json::object());
  reject_unknown(jm,
                 {"encoder_channels", "block_channels", "blocks", "kernel", "speakers",
                  "encoder_kernel", "encoder_stride", "init_seed"},
                 "model");
  c.model.encoder_channels = jm.value("encoder_channels", 64);
  c.model.block_channels = jm.value("block_channels", 128);
  c.model.blocks = jm.value("blocks", 4);
  c.model.kernel = jm.value("kernel", 3);
  c.model.speakers = jm.value("speakers", 2);
  c.model.encoder_kernel = jm.value("encoder_kernel", 16);
  c.model.encoder_stride = jm.value("encoder_stride", 8);
  c.model.init_seed = jm.value("init_seed", 0x5eedULL);

  json jd = j.value("data", json::object());
  reject_unknown(jd,
                 {"n_train", "n_val", "n_test", "base_seed", "samples", "sample_rate",
                  "source_snr_lo", "source_snr_hi", "add_noise", "noise_snr_lo",
                  "noise_snr_hi"},
                 "data");
  c.data.n_train = jd.value("n_train", 512);
  c.data.n_val = jd.value("n_val", 64);
  c.data.n_test = jd.value("n_test", 64);
  c.data.base_seed = jd.value("base_seed", 1ULL);
  c.data.synth.samples = jd.value("samples", 16000);
  c.data.synth.sample_rate = jd.value("sample_rate", 8000);
  c.data.synth.source_snr_lo = jd.value("source_snr_lo", -5.0);
  c.data.synth.source_snr_hi = jd.value("source_snr_hi", 5.0);
  c.data.synth.add_noise = jd.value("add_noise", false);
  c.data.synth.noise_snr_lo = jd.value("noise_snr_lo", 10.0);
  c.data.synth.noise_snr_hi = jd.value("noise_snr_hi", 20.0);

  json jt = j.value("train", json::object());
  reject_unknown(jt,
                 {"lr", "batch_size", "max_epochs", "plateau_patience",
                  "early_stop_patience", "seed"},
                 "train");
  c.train.lr = jt.value("lr", 0.001);
  c.train.batch_size = jt.value("batch_size", 1);
  c.train.max_epochs = jt.value("max_epochs", 30);
  c.train.plateau_patience = jt.value("plateau_patience", 15);
  c.train.early_stop_patience = jt.value("early_stop_patience", 30);
  c.train.seed = jt.value("seed", 0ULL);

  json jk = j.value("mask", json::object());
  reject_unknown(jk, {"epsilon", "tau", "tau_end", "iterations", "lr", "seed"}, "mask");
  c.mask_epsilon = jk.value("epsilon", 0.7);
  c.mask_tau = jk.value("tau", 1.0);
  c.mask_tau_end = jk.value("tau_end", c.mask_tau);
  c.mask_iterations = jk.value("iterations", 500);
  c.mask_lr = jk.value("lr", 0.1);
  c.mask_seed = jk.value("seed", 0ULL);

  c.finetune_epochs = j.value("finetune_epochs", 1);

  // Canonical merged dump for hashing.
  c.raw = {{"model",
            {{"encoder_channels", c.model.encoder_channels},
             {"block_channels", c.model.block_channels},
             {"blocks", c.model.blocks},
             {"kernel", c.model.kernel},
             {"speakers", c.model.speakers},
             {"encoder_kernel", c.model.encoder_kernel},
             {"encoder_stride", c.model.encoder_stride},
             {"init_seed", c.model.init_seed}}},
           {"data",
            {{"n_train", c.data.n_train},
             {"n_val", c.data.n_val},
             {"n_test", c.data.n_test},
             {"base_seed", c.data.base_seed},
             {"samples", c.data.synth.samples},
             {"sample_rate", c.data.synth.sample_rate},
             {"source_snr_lo", c.data.synth.source_snr_lo},
             {"source_snr_hi", c.data.synth.source_snr_hi},
             {"add_noise", c.data.synth.add_noise},
             {"noise_snr_lo", c.data.synth.noise_snr_lo},
             {"noise_snr_hi", c.data.synth.noise_snr_hi}}},
           {"train",
            {{"lr", c.train.lr},
             {"batch_size", c.train.batch_size},
             {"max_epochs", c.train.max_epochs},
             {"plateau_patience", c.train.plateau_patience},
             {"early_stop_patience", c.train.early_stop_patience},
             {"seed", c.train.seed}}},
           {"mask",
            {{"epsilon", c.mask_epsilon},
             {"tau", c.mask_tau},
             {"tau_end", c.mask_tau_end},
             {"iterations", c.mask_iterations},
             {"lr", c.mask_lr},
             {"seed", c.mask_seed}}},
           {"finetune_epochs", c.finetune_epochs}};
  return c;
}

std::string config_hash(const RunConfig& c) {
  const std::string dump = c.raw.dump();
  std::uint64_t h = 1469598103934665603ULL;  // FNV-1a 64
  for (unsigned char ch : dump) {
    h ^= ch;
    h *= 1099511628211ULL;
  }
  char buf[32];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

struct OutputWriter {
  fs::path dir;
  bool force = false;

  fs::path path(const std::string& name) const { return dir / name; }

  void write(const std::string& name, const std::string& content) const {
    fs::create_directories(dir);
    const fs::path p = dir / name;
    if (fs::exists(p) && !force)
      throw ConfigError("output exists (use --force to overwrite): " + p.string());
    std::ofstream f(p, std::ios::binary);
    if (!f) throw ConfigError("cannot open output " + p.string());
    f.write(content.data(), static_cast<std::streamsize>(content.size()));
  }

  void guard(const std::string& name) const {
    const fs::path p = dir / name;
    if (fs::exists(p) && !force)
      throw ConfigError("output exists (use --force to overwrite): " + p.string());
    fs::create_directories(dir);
  }
};

void write_manifest(const OutputWriter& out, const RunConfig& cfg,
                    const std::string& stage, const json& extra) {
  json m;
  m["stage"] = stage;
  m["version"] = kVersion;
  m["config_hash"] = config_hash(cfg);
  m["config"] = cfg.raw;
  m["extra"] = extra;
  out.write(stage + ".manifest.json", m.dump(2) + "\n");
}

ModelGraph model_from(const RunConfig& cfg, const std::string& checkpoint) {
  if (checkpoint.empty()) return build_toy_sepnet(cfg.model);
  if (!fs::exists(checkpoint))
    throw ConfigError("checkpoint not found: " + checkpoint +
                      " (run the previous pipeline stage first)");
  return load_checkpoint(checkpoint).graph;
}

FinalMasks masks_from(const std::string& path) {
  if (!fs::exists(path))
    throw ConfigError("mask file not found: " + path + " (run learn-mask first)");
  return load_mask_file(path);
}

int cmd_profile(const RunConfig& cfg, const OutputWriter& out,
                const std::string& checkpoint, int length, const std::string& name) {
  ModelGraph g = model_from(cfg, checkpoint);
  const int L = length > 0 ? length : cfg.data.synth.samples;
  const auto rep = profile(g, L);
  out.write("profile.csv", report_to_csv(rep));
  out.write("profile_table1.csv", report_table1_csv(rep, name));
  out.write("profile.json", report_to_json(rep, name) + "\n");
  write_manifest(out, cfg, "profile",
                 {{"length", L}, {"heaviest", to_string(heaviest_component(rep))}});
  std::cout << report_table1_csv(rep, name);
  std::cout << "heaviest component: " << to_string(heaviest_component(rep)) << "\n";
  return 0;
}

int cmd_train(const RunConfig& cfg, const OutputWriter& out) {
  out.guard("model.ckpt");
  auto data = make_dataset(cfg.data);
  auto g = build_toy_sepnet(cfg.model);
  auto r = train(g, data, cfg.train);
  CheckpointMeta meta;
  meta.epoch = r.best_epoch;
  meta.has_best = !r.log.empty();
  meta.best_val_sisdri = r.best_val_sisdri;
  save_checkpoint(r.model, out.path("model.ckpt").string(), meta);
  out.write("training_log.csv", training_log_csv(r.log));
  write_manifest(out, cfg, "train",
                 {{"best_epoch", r.best_epoch},
                  {"best_val_sisdri", r.best_val_sisdri},
                  {"epochs_run", r.log.size()}});
  std::cout << "trained " << r.log.size() << " epochs; best val SI-SDRi "
            << r.best_val_sisdri << " dB at epoch " << r.best_epoch << "\n";
  return 0;
}

int cmd_learn_mask(const RunConfig& cfg, const OutputWriter& out,
                   const std::string& checkpoint, const std::string& resume) {
  out.guard("masks.txt");
  ModelGraph g = model_from(cfg, checkpoint);
  auto data = make_dataset(cfg.data);
  MaskSet ms = resume.empty()
                   ? init_masks(g, cfg.mask_epsilon, cfg.mask_tau, cfg.mask_seed)
                   : load_logits_sidecar(g, resume, cfg.mask_epsilon, cfg.mask_tau,
                                         cfg.mask_seed);
  ms.tau = TauSchedule{cfg.mask_tau, cfg.mask_tau_end};
  MaskLearnStats stats;
  ms = learn_masks(g, ms, data.train, cfg.mask_iterations, cfg.mask_lr, &stats);
  auto fm = finalize_masks(ms);
  save_mask_file(ms, fm, out.path("masks.txt").string());
  json kept = json::object();
  for (const auto& [gid, n] : kept_counts(fm)) kept[gid] = n;
  write_manifest(out, cfg, "learn-mask",
                 {{"iterations", cfg.mask_iterations},
                  {"kept", kept},
                  {"warnings", fm.warnings},
                  {"final_loss", stats.losses.empty() ? 0.0f : stats.losses.back()}});
  for (const std::string& w : fm.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "learned masks for " << fm.keep.size() << " groups -> "
            << out.path("masks.txt").string() << "\n";
  return 0;
}

int cmd_prune(const RunConfig& cfg, const OutputWriter& out,
              const std::string& checkpoint, const std::string& mask_path) {
  out.guard("pruned.ckpt");
  ModelGraph g = model_from(cfg, checkpoint);
  auto fm = masks_from(mask_path);
  auto bp = blueprint_from_masks(g, fm);
  auto pruned = apply_prune(g, bp);
  save_checkpoint(pruned, out.path("pruned.ckpt").string());
  const auto before = profile(g, cfg.data.synth.samples);
  const auto after = profile(pruned, cfg.data.synth.samples);
  write_manifest(out, cfg, "prune",
                 {{"params_before", before.total.params},
                  {"params_after", after.total.params},
                  {"macs_before", before.total.macs},
                  {"macs_after", after.total.macs}});
  std::cout << "pruned: params " << before.total.params << " -> " << after.total.params
            << ", macs " << before.total.macs << " -> " << after.total.macs << "\n";
  return 0;
}

int cmd_finetune(const RunConfig& cfg, const OutputWriter& out,
                 const std::string& checkpoint) {
  out.guard("finetuned.ckpt");
  ModelGraph g = model_from(cfg, checkpoint);
  auto data = make_dataset(cfg.data);
  auto r = finetune(g, data, cfg.train, cfg.finetune_epochs);
  CheckpointMeta meta;
  meta.epoch = r.best_epoch;
  meta.has_best = !r.log.empty();
  meta.best_val_sisdri = r.best_val_sisdri;
  save_checkpoint(r.model, out.path("finetuned.ckpt").string(), meta);
  out.write("finetune_log.csv", training_log_csv(r.log));
  write_manifest(out, cfg, "finetune",
                 {{"epochs", cfg.finetune_epochs},
                  {"best_val_sisdri", r.best_val_sisdri}});
  std::cout << "finetuned " << r.log.size() << " epochs; best val SI-SDRi "
            << r.best_val_sisdri << " dB\n";
  return 0;
}

int cmd_eval(const RunConfig& cfg, const OutputWriter& out,
             const std::string& checkpoint, const std::string& original,
             const std::string& mask_path) {
  out.guard("eval.csv");
  auto data = make_dataset(cfg.data);
  std::vector<EvalRecord> records;

  ModelGraph subject = model_from(cfg, checkpoint);
  if (!original.empty() && !mask_path.empty()) {
    // Table-style comparison at matched per-group sparsity.
    ModelGraph full = model_from(cfg, original);
    auto fm = masks_from(mask_path);
    const auto counts = kept_counts(fm);
    records.push_back(evaluate(full, data.test, "original"));
    TrainConfig ft = cfg.train;
    for (const auto& [name, maker] :
         std::vector<std::pair<std::string, FinalMasks>>{
             {"random", random_mask_with_counts(full, counts, cfg.mask_seed + 1000)},
             {"magnitude", magnitude_mask_with_counts(full, counts)}}) {
      auto pruned = apply_prune(full, blueprint_from_masks(full, maker));
      auto r = finetune(pruned, data, ft, cfg.finetune_epochs);
      records.push_back(evaluate(r.model, data.test, name));
    }
    records.push_back(evaluate(subject, data.test, "sepprune"));
  } else {
    records.push_back(evaluate(subject, data.test, "model"));
  }

  out.write("eval.csv", eval_records_csv(records));
  std::string js = "[";
  for (std::size_t i = 0; i < records.size(); ++i)
    js += (i ? ",\n" : "\n") + eval_record_json(records[i]);
  js += "\n]\n";
  out.write("eval.json", js);
  write_manifest(out, cfg, "eval", {{"models", records.size()}});
  std::cout << eval_records_csv(records);
  return 0;
}

int cmd_ablate(const RunConfig& cfg, const OutputWriter& out,
               const std::string& checkpoint) {
  out.guard("ablate_epsilon.csv");
  ModelGraph g = model_from(cfg, checkpoint);
  auto data = make_dataset(cfg.data);

  // Threshold sweep on one set of learned logits.
  MaskSet learned = learn_masks(
      g, init_masks(g, cfg.mask_epsilon, cfg.mask_tau, cfg.mask_seed), data.train,
      cfg.mask_iterations, cfg.mask_lr);
  std::string eps_csv = "epsilon,kept_channels,params,macs,si_sdri_after_finetune\n";
  for (double eps : {0.5, 0.6, 0.7, 0.8, 0.9}) {
    auto fm = finalize_masks(learned, eps);
    auto pruned = apply_prune(g, blueprint_from_masks(g, fm));
    const auto rep = profile(pruned, cfg.data.synth.samples);
    int kept = 0;
    for (const auto& [gid, n] : kept_counts(fm)) kept += n;
    auto r = finetune(pruned, data, cfg.train, cfg.finetune_epochs);
    auto ev = evaluate(r.model, data.test, "eps");
    char buf[160];
    std::snprintf(buf, sizeof buf, "%.1f,%d,%lld,%lld,%.4f\n", eps, kept,
                  rep.total.params, rep.total.macs, ev.mean_si_sdr_i);
    eps_csv += buf;
  }
  out.write("ablate_epsilon.csv", eps_csv);

  // Iteration sweep, scaled around the configured count.
  std::string it_csv = "iterations,kept_channels,params,macs,si_sdri_after_finetune\n";
  for (double scale : {0.6, 1.0, 1.8}) {
    const int iters = std::max(1, static_cast<int>(std::lround(scale * cfg.mask_iterations)));
    auto ms = learn_masks(g, init_masks(g, cfg.mask_epsilon, cfg.mask_tau, cfg.mask_seed),
                          data.train, iters, cfg.mask_lr);
    auto fm = finalize_masks(ms);
    auto pruned = apply_prune(g, blueprint_from_masks(g, fm));
    const auto rep = profile(pruned, cfg.data.synth.samples);
    int kept = 0;
    for (const auto& [gid, n] : kept_counts(fm)) kept += n;
    auto r = finetune(pruned, data, cfg.train, cfg.finetune_epochs);
    auto ev = evaluate(r.model, data.test, "iters");
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%d,%lld,%lld,%.4f\n", iters, kept,
                  rep.total.params, rep.total.macs, ev.mean_si_sdr_i);
    it_csv += buf;
  }
  out.write("ablate_iterations.csv", it_csv);

  // Step-by-step vs joint optimization, matched budgets.
  std::string joint_csv = "arm,si_sdri_after_finetune\n";
  {
    auto fm = finalize_masks(learned);
    auto pruned = apply_prune(g, blueprint_from_masks(g, fm));
    auto r = finetune(pruned, data, cfg.train, cfg.finetune_epochs);
    auto ev = evaluate(r.model, data.test, "stepwise");
    char buf[96];
    std::snprintf(buf, sizeof buf, "stepwise,%.4f\n", ev.mean_si_sdr_i);
    joint_csv += buf;
  }
  {
    auto jr = joint_optimize(g, init_masks(g, cfg.mask_epsilon, cfg.mask_tau, cfg.mask_seed),
                             data.train, cfg.mask_iterations, cfg.mask_lr, cfg.train.lr);
    auto fm = finalize_masks(jr.masks);
    auto pruned = apply_prune(jr.model, blueprint_from_masks(jr.model, fm));
    auto r = finetune(pruned, data, cfg.train, cfg.finetune_epochs);
    auto ev = evaluate(r.model, data.test, "joint");
    char buf[96];
    std::snprintf(buf, sizeof buf, "joint,%.4f\n", ev.mean_si_sdr_i);
    joint_csv += buf;
  }
  out.write("ablate_joint.csv", joint_csv);
  write_manifest(out, cfg, "ablate", json::object());
  std::cout << "ablations written to " << out.dir.string() << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{std::string(kVersion) +
               " - structured channel pruning for toy source-separation models"};
  app.require_subcommand(1);

  std::string config_path, out_dir, checkpoint, original, mask_path, resume, name = "toy";
  int length = 0;
  bool force = false;
  app.add_option("--config", config_path, "JSON run configuration");
  app.add_option("--out", out_dir, "output directory (or $SEPPRUNE_OUT_DIR, default ./runs)");
  app.add_flag("--force", force, "overwrite existing outputs");

  auto* p_profile = app.add_subcommand("profile", "parameter/MAC analysis");
  p_profile->add_option("--checkpoint", checkpoint, "model checkpoint (default: fresh model)");
  p_profile->add_option("--length", length, "input length in samples");
  p_profile->add_option("--name", name, "model name for the report");

  auto* p_train = app.add_subcommand("train", "train the full model");
  auto* p_mask = app.add_subcommand("learn-mask", "learn channel masks");
  p_mask->add_option("--checkpoint", checkpoint, "trained model checkpoint")->required();
  p_mask->add_option("--resume-logits", resume, "logits sidecar to resume from");
  auto* p_prune = app.add_subcommand("prune", "structurally prune with learned masks");
  p_prune->add_option("--checkpoint", checkpoint, "trained model checkpoint")->required();
  p_prune->add_option("--masks", mask_path, "mask file from learn-mask")->required();
  auto* p_ft = app.add_subcommand("finetune", "fine-tune a pruned checkpoint");
  p_ft->add_option("--checkpoint", checkpoint, "pruned checkpoint")->required();
  auto* p_eval = app.add_subcommand("eval", "evaluate checkpoints");
  p_eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();
  p_eval->add_option("--original", original, "unpruned checkpoint for the comparison table");
  p_eval->add_option("--masks", mask_path, "mask file (fixes the matched sparsity)");
  auto* p_ablate = app.add_subcommand("ablate", "threshold/iteration/joint ablations");
  p_ablate->add_option("--checkpoint", checkpoint, "trained model checkpoint")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  try {
    RunConfig cfg = load_config(config_path);
    OutputWriter out;
    if (out_dir.empty()) {
      const char* env = std::getenv("SEPPRUNE_OUT_DIR");
      out_dir = env ? env : "runs";
    }
    out.dir = out_dir;
    out.force = force;

    if (p_profile->parsed()) return cmd_profile(cfg, out, checkpoint, length, name);
    if (p_train->parsed()) return cmd_train(cfg, out);
    if (p_mask->parsed()) return cmd_learn_mask(cfg, out, checkpoint, resume);
    if (p_prune->parsed()) return cmd_prune(cfg, out, checkpoint, mask_path);
    if (p_ft->parsed()) return cmd_finetune(cfg, out, checkpoint);
    if (p_eval->parsed()) return cmd_eval(cfg, out, checkpoint, original, mask_path);
    if (p_ablate->parsed()) return cmd_ablate(cfg, out, checkpoint);
    std::cerr << "no subcommand\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const InvalidArgumentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const NumericError& e) {
    std::cerr << "numeric failure: " << e.what() << "\n";
    return 1;
  } catch (const std::exception& e) {
    std::cerr << "failure: " << e.what() << "\n";
    return 1;
  }
}
