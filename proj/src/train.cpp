#include "sepprune/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <json.hpp>
#include <numeric>

#include "sepprune/adam.hpp"
#include "sepprune/forward.hpp"
#include "sepprune/loss.hpp"
#include "sepprune/metrics.hpp"
#include "sepprune/profiler.hpp"
#include "sepprune/rng.hpp"

namespace sepprune {

namespace {

std::vector<std::string> sorted_param_names(const ModelGraph& g) {
  std::vector<std::string> names;
  names.reserve(g.parameters.size());
  for (const auto& [name, values] : g.parameters) names.push_back(name);
  return names;  // std::map iteration is already sorted
}

double mean_val_sisdri(const ModelGraph& model, const std::vector<AudioBatch>& batches) {
  double acc = 0.0;
  for (std::size_t i = 0; i < batches.size(); ++i) {
    const AudioBatch& b = batches[i];
    Tape<float> tape;
    tape.set_recording(false);
    auto bt = batch_to_tensors<float>(tape, b);
    auto est = run_forward(tape, model, bt.mixture).estimates;
    const int T = b.samples;
    std::vector<double> mix(b.mixture.begin(), b.mixture.end());
    std::vector<std::vector<double>> refs, ests;
    for (int c = 0; c < b.speakers; ++c) {
      refs.emplace_back(b.sources.begin() + static_cast<long>(c) * T,
                        b.sources.begin() + static_cast<long>(c + 1) * T);
      const float* e = est.values().data() + static_cast<std::size_t>(c) * T;
      ests.emplace_back(e, e + T);
    }
    acc += separation_improvement(mix, refs, ests).si_sdr_i;
  }
  return acc / static_cast<double>(batches.size());
}

std::vector<AudioBatch> materialize_all(const DatasetManifest& split) {
  std::vector<AudioBatch> out;
  out.reserve(split.utterances.size());
  for (std::size_t i = 0; i < split.utterances.size(); ++i)
    out.push_back(materialize(split, i));
  return out;
}

// One optimizer pass over the train split in a deterministic shuffled order.
double run_epoch(ModelGraph& model, const std::vector<AudioBatch>& cached,
                 const TrainConfig& cfg, AdamState<float>& adam, double lr,
                 int epoch) {
  std::vector<std::size_t> order(cached.size());
  std::iota(order.begin(), order.end(), 0);
  Rng shuffle_rng(cfg.seed * 1000003ull + static_cast<std::uint64_t>(epoch));
  for (std::size_t i = order.size(); i > 1; --i)
    std::swap(order[i - 1], order[shuffle_rng.uniform_index(i)]);

  const auto names = sorted_param_names(model);
  double loss_acc = 0.0;
  std::size_t n_batches = 0;
  for (std::size_t at = 0; at < order.size(); at += static_cast<std::size_t>(cfg.batch_size)) {
    std::vector<AudioBatch> items;
    for (std::size_t j = at;
         j < std::min(order.size(), at + static_cast<std::size_t>(cfg.batch_size)); ++j)
      items.push_back(cached[order[j]]);
    const AudioBatch batch = items.size() == 1 ? items[0] : stack_batches(items);

    Tape<float> tape;
    auto bt = batch_to_tensors<float>(tape, batch);
    ForwardOptions<float> opt;
    opt.params_require_grad = true;
    auto res = run_forward(tape, model, bt.mixture, opt);
    auto loss = pit_neg_sisdr_loss(bt.references, res.estimates);
    try {
      tape.backward(loss);
    } catch (const NumericError& e) {
      throw NumericError(e.op(), std::string(e.what()) + " (training epoch " +
                                     std::to_string(epoch) + ")");
    }

    std::vector<std::span<float>> params;
    std::vector<std::span<const float>> grads;
    std::vector<std::vector<float>> grad_storage;
    for (const std::string& name : names) {
      params.emplace_back(model.parameters.at(name));
      auto g = res.params.at(name).grad();
      grad_storage.emplace_back(g.begin(), g.end());
      if (grad_storage.back().empty())
        grad_storage.back().assign(model.parameters.at(name).size(), 0.0f);
    }
    for (const auto& g : grad_storage) grads.emplace_back(g);
    adam_step<float>(params, grads, adam, lr);
    loss_acc += loss.item();
    ++n_batches;
  }
  return loss_acc / static_cast<double>(std::max<std::size_t>(n_batches, 1));
}

TrainResult train_loop(const ModelGraph& init, const DatasetSplits& data,
                       const TrainConfig& cfg) {
  if (data.train.utterances.empty() || data.val.utterances.empty())
    throw InvalidArgumentError("train: train/validation splits must be non-empty");
  if (cfg.lr <= 0 || cfg.batch_size < 1 || cfg.plateau_patience < 1 ||
      cfg.early_stop_patience < 1)
    throw InvalidArgumentError("train: bad config");

  TrainResult out;
  out.model = init;
  if (cfg.max_epochs == 0) return out;
  ModelGraph current = init;

  AdamState<float> adam;
  std::vector<std::size_t> sizes;
  for (const auto& name : sorted_param_names(current))
    sizes.push_back(current.parameters.at(name).size());
  adam.init(sizes);

  const auto train_batches = materialize_all(data.train);
  const auto val_batches = materialize_all(data.val);
  double lr = cfg.lr;
  double best = -1e300;
  int since_best = 0;
  for (int epoch = 1; epoch <= cfg.max_epochs; ++epoch) {
    const double train_loss = run_epoch(current, train_batches, cfg, adam, lr, epoch);
    double val = mean_val_sisdri(current, val_batches);
    if (cfg.val_metric_hook) val = cfg.val_metric_hook(epoch, val);
    out.log.push_back(EpochLog{epoch, train_loss, val, lr});

    if (val > best) {
      best = val;
      since_best = 0;
      out.best_epoch = epoch;
      out.best_val_sisdri = val;
      out.model.parameters = current.parameters;
    } else {
      ++since_best;
    }
    if (since_best >= cfg.early_stop_patience) break;
    if (since_best > 0 && since_best % cfg.plateau_patience == 0) lr *= 0.5;
  }
  return out;
}

}  // namespace

TrainResult train(const ModelGraph& init, const DatasetSplits& data,
                  const TrainConfig& cfg) {
  return train_loop(init, data, cfg);
}

TrainResult finetune(const ModelGraph& pruned, const DatasetSplits& data,
                     TrainConfig cfg, int epochs) {
  if (epochs < 0) throw InvalidArgumentError("finetune: epochs must be >= 0");
  cfg.max_epochs = epochs;
  if (epochs == 0) {
    TrainResult out;
    out.model = pruned;
    return out;
  }
  return train_loop(pruned, data, cfg);
}

std::string training_log_csv(const std::vector<EpochLog>& log) {
  std::string out = "epoch,train_loss,val_sisdri,lr\n";
  char buf[128];
  for (const EpochLog& e : log) {
    std::snprintf(buf, sizeof buf, "%d,%.6f,%.6f,%.6g\n", e.epoch, e.train_loss,
                  e.val_sisdri, e.lr);
    out += buf;
  }
  return out;
}

EvalRecord evaluate(const ModelGraph& model, const DatasetManifest& split,
                    const std::string& model_name) {
  if (split.utterances.empty())
    throw InvalidArgumentError("evaluate: test split is empty");
  EvalRecord rec;
  rec.model_name = model_name;
  for (std::size_t i = 0; i < split.utterances.size(); ++i) {
    const AudioBatch b = materialize(split, i);
    Tape<float> tape;
    tape.set_recording(false);
    auto bt = batch_to_tensors<float>(tape, b);
    auto est = run_forward(tape, model, bt.mixture).estimates;
    const int T = b.samples;
    std::vector<double> mix(b.mixture.begin(), b.mixture.end());
    std::vector<std::vector<double>> refs, ests;
    for (int c = 0; c < b.speakers; ++c) {
      refs.emplace_back(b.sources.begin() + static_cast<long>(c) * T,
                        b.sources.begin() + static_cast<long>(c + 1) * T);
      const float* e = est.values().data() + static_cast<std::size_t>(c) * T;
      ests.emplace_back(e, e + T);
    }
    const auto imp = separation_improvement(mix, refs, ests);
    rec.utterances.push_back({static_cast<int>(i), imp.sdr_i, imp.si_sdr_i});
    rec.mean_sdr_i += imp.sdr_i;
    rec.mean_si_sdr_i += imp.si_sdr_i;
  }
  rec.mean_sdr_i /= static_cast<double>(rec.utterances.size());
  rec.mean_si_sdr_i /= static_cast<double>(rec.utterances.size());
  const auto prof = profile(model, split.params.samples);
  rec.params = prof.total.params;
  rec.macs = prof.total.macs;
  return rec;
}

std::string eval_records_csv(const std::vector<EvalRecord>& records) {
  std::string out = "Model,Params,MACs,SDRi,SI-SDRi\n";
  char buf[160];
  for (const EvalRecord& r : records) {
    std::snprintf(buf, sizeof buf, "%s,%lld,%lld,%.4f,%.4f\n", r.model_name.c_str(),
                  r.params, r.macs, r.mean_sdr_i, r.mean_si_sdr_i);
    out += buf;
  }
  return out;
}

std::string eval_record_json(const EvalRecord& r) {
  nlohmann::json j;
  j["model"] = r.model_name;
  j["params"] = r.params;
  j["macs"] = r.macs;
  j["mean_sdr_i"] = r.mean_sdr_i;
  j["mean_si_sdr_i"] = r.mean_si_sdr_i;
  nlohmann::json utts = nlohmann::json::array();
  for (const auto& u : r.utterances)
    utts.push_back({{"index", u.index}, {"sdr_i", u.sdr_i}, {"si_sdr_i", u.si_sdr_i}});
  j["utterances"] = std::move(utts);
  return j.dump(2);
}

JointResult joint_optimize(const ModelGraph& model, const MaskSet& init,
                           const DatasetManifest& split, int iterations,
                           double mask_lr, double weight_lr) {
  if (iterations < 0)
    throw InvalidArgumentError("joint_optimize: iterations must be >= 0");
  if (split.utterances.empty())
    throw InvalidArgumentError("joint_optimize: dataset is empty");

  JointResult out;
  out.model = model;
  out.masks = init;
  if (iterations == 0) return out;

  Rng rng(init.seed);
  std::vector<AudioBatch> batches;
  for (std::size_t i = 0; i < split.utterances.size(); ++i)
    batches.push_back(materialize(split, i));

  AdamState<float> adam;
  const auto names = sorted_param_names(out.model);
  std::vector<std::size_t> sizes;
  for (const auto& name : names) sizes.push_back(out.model.parameters.at(name).size());
  adam.init(sizes);

  std::map<std::string, MaskGrad> mgrads;
  std::map<std::string, std::vector<float>> pgrads;
  for (int it = 0; it < iterations; ++it) {
    MaskStepOptions opt;
    opt.tau = out.masks.tau.at(it, iterations);
    opt.mask_grads = &mgrads;
    opt.params_require_grad = true;
    opt.param_grads = &pgrads;
    masked_forward_loss(out.model, out.masks,
                        batches[static_cast<std::size_t>(it) % batches.size()], rng, opt);
    for (auto& [gid, gm] : out.masks.masks) {
      const MaskGrad& g = mgrads.at(gid);
      for (int j = 0; j < gm.channels; ++j) {
        gm.logit_keep[static_cast<std::size_t>(j)] -=
            static_cast<float>(mask_lr) * g.keep[static_cast<std::size_t>(j)];
        gm.logit_drop[static_cast<std::size_t>(j)] -=
            static_cast<float>(mask_lr) * g.drop[static_cast<std::size_t>(j)];
      }
    }
    std::vector<std::span<float>> params;
    std::vector<std::span<const float>> grads;
    for (const std::string& name : names) {
      params.emplace_back(out.model.parameters.at(name));
      grads.emplace_back(pgrads.at(name));
    }
    adam_step<float>(params, grads, adam, weight_lr);
  }

  // Same noise-free readout as learn_masks.
  for (auto& [gid, gm] : out.masks.masks)
    for (int j = 0; j < gm.channels; ++j) {
      const double d = (static_cast<double>(gm.logit_keep[static_cast<std::size_t>(j)]) -
                        gm.logit_drop[static_cast<std::size_t>(j)]) /
                       out.masks.tau.end;
      const double pi = 1.0 / (1.0 + std::exp(-d));
      gm.pi[static_cast<std::size_t>(j)] = static_cast<float>(pi);
      gm.m[static_cast<std::size_t>(j)] = pi > gm.epsilon ? 1 : 0;
    }
  return out;
}

}  // namespace sepprune
