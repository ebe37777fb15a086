#pragma once

#include <functional>
#include <string>
#include <vector>

#include "sepprune/data.hpp"
#include "sepprune/masks.hpp"
#include "sepprune/model.hpp"

namespace sepprune {

struct TrainConfig {
  double lr = 0.001;
  int batch_size = 1;
  int max_epochs = 30;
  int plateau_patience = 15;     // halve lr after this many epochs w/o a best
  int early_stop_patience = 30;  // stop after this many epochs w/o a best
  std::uint64_t seed = 0;
  // Test hook: overrides the computed validation metric (plateau simulation).
  std::function<double(int epoch, double computed)> val_metric_hook;
};

struct EpochLog {
  int epoch = 0;
  double train_loss = 0.0;
  double val_sisdri = 0.0;
  double lr = 0.0;  // the rate this epoch ran with
};

struct TrainResult {
  ModelGraph model;  // best-validation weights
  std::vector<EpochLog> log;
  int best_epoch = 0;
  double best_val_sisdri = 0.0;
};

// Adam on all parameters, negative PIT SI-SDR loss, per-epoch validation
// SI-SDRi selection, plateau halving and early stopping.
TrainResult train(const ModelGraph& init, const DatasetSplits& data,
                  const TrainConfig& config);

// Same loop starting from surviving weights; `epochs` caps max_epochs (the
// one-epoch fast-recovery protocol). Optimizer state starts fresh.
TrainResult finetune(const ModelGraph& pruned, const DatasetSplits& data,
                     TrainConfig config, int epochs);

std::string training_log_csv(const std::vector<EpochLog>& log);

struct EvalRecord {
  struct Utterance {
    int index = 0;
    double sdr_i = 0.0;
    double si_sdr_i = 0.0;
  };
  std::string model_name;
  std::vector<Utterance> utterances;
  double mean_sdr_i = 0.0;
  double mean_si_sdr_i = 0.0;
  long long params = 0;
  long long macs = 0;
};

// Per-utterance best-permutation SDRi / SI-SDRi over a split, with profiler
// counts attached. Deterministic: utterances in manifest order.
EvalRecord evaluate(const ModelGraph& model, const DatasetManifest& split,
                    const std::string& model_name);

// One comparison row per record (Table-style: Params, MACs, SDRi, SI-SDRi).
std::string eval_records_csv(const std::vector<EvalRecord>& records);
std::string eval_record_json(const EvalRecord& record);

// Ablation arm: identical to learn_masks except the model weights also
// receive Adam updates each step. Returns the moved weights and the masks.
struct JointResult {
  ModelGraph model;
  MaskSet masks;
};
JointResult joint_optimize(const ModelGraph& model, const MaskSet& init,
                           const DatasetManifest& split, int iterations,
                           double mask_lr = 0.1, double weight_lr = 0.001);

}  // namespace sepprune
