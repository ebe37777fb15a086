#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <cstring>

#include "sepprune/pruner.hpp"
#include "sepprune/train.hpp"

using namespace sepprune;

namespace {

ToySepNetConfig tiny_config() {
  ToySepNetConfig c;
  c.encoder_channels = 8;
  c.block_channels = 12;
  c.blocks = 1;
  c.encoder_kernel = 8;
  c.encoder_stride = 4;
  return c;
}

DatasetSplits tiny_data(int n_train = 6) {
  DatasetConfig cfg;
  cfg.n_train = n_train;
  cfg.n_val = 2;
  cfg.n_test = 2;
  cfg.synth.samples = 1024;
  return make_dataset(cfg);
}

bool params_equal(const ModelGraph& a, const ModelGraph& b) {
  if (a.parameters.size() != b.parameters.size()) return false;
  for (const auto& [name, values] : a.parameters) {
    const auto& other = b.parameters.at(name);
    if (other.size() != values.size()) return false;
    if (std::memcmp(other.data(), values.data(), values.size() * sizeof(float)) != 0)
      return false;
  }
  return true;
}

}  // namespace

TEST_CASE("train with max_epochs 0 returns initial weights and empty log") {
  auto g = build_toy_sepnet(tiny_config());
  auto data = tiny_data();
  TrainConfig cfg;
  cfg.max_epochs = 0;
  auto r = train(g, data, cfg);
  CHECK(r.log.empty());
  CHECK(params_equal(r.model, g));
}

TEST_CASE("plateau schedule: frozen metric halves lr at 16 and stops at 31") {
  auto g = build_toy_sepnet(tiny_config());
  auto data = tiny_data(2);
  TrainConfig cfg;
  cfg.max_epochs = 60;
  cfg.val_metric_hook = [](int, double) { return 1.0; };  // frozen metric
  auto r = train(g, data, cfg);
  REQUIRE(r.log.size() == 31);  // stops after epoch 31
  CHECK(r.log[15].epoch == 16);
  CHECK(r.log[15].lr == 0.001);      // epoch 16 still ran at the initial rate
  CHECK(r.log[16].lr == 0.0005);     // halving decided at the end of epoch 16
  CHECK(r.log[30].epoch == 31);
  CHECK(r.best_epoch == 1);
}

TEST_CASE("training reduces validation loss on the tiny task") {
  auto g = build_toy_sepnet(tiny_config());
  auto data = tiny_data();
  TrainConfig cfg;
  cfg.max_epochs = 4;
  cfg.seed = 5;
  auto r = train(g, data, cfg);
  REQUIRE(r.log.size() == 4);
  CHECK(r.log.back().train_loss < r.log.front().train_loss);
  CHECK(r.best_val_sisdri > -100.0);
  for (const auto& e : r.log) CHECK(std::isfinite(e.train_loss));
}

TEST_CASE("training is reproducible bit-for-bit") {
  auto g = build_toy_sepnet(tiny_config());
  auto data = tiny_data(3);
  TrainConfig cfg;
  cfg.max_epochs = 2;
  cfg.seed = 17;
  auto a = train(g, data, cfg);
  auto b = train(g, data, cfg);
  CHECK(params_equal(a.model, b.model));
  CHECK(training_log_csv(a.log) == training_log_csv(b.log));
}

TEST_CASE("training log CSV carries the fixed header") {
  std::vector<EpochLog> log = {{1, -3.5, 2.25, 0.001}};
  const std::string csv = training_log_csv(log);
  CHECK(csv.rfind("epoch,train_loss,val_sisdri,lr\n", 0) == 0);
  CHECK(csv.find("1,-3.500000,2.250000,0.001") != std::string::npos);
}

TEST_CASE("finetune with 0 epochs is the identity") {
  auto g = build_toy_sepnet(tiny_config());
  auto data = tiny_data(2);
  auto r = finetune(g, data, TrainConfig{}, 0);
  CHECK(params_equal(r.model, g));
  CHECK(r.log.empty());
  CHECK_THROWS_AS(finetune(g, data, TrainConfig{}, -1), InvalidArgumentError);
}

TEST_CASE("finetune runs on a pruned model") {
  auto g = build_toy_sepnet(tiny_config());
  auto fm = random_mask(g, 0.5, 3);
  auto pruned = apply_prune(g, blueprint_from_masks(g, fm));
  auto data = tiny_data(3);
  TrainConfig cfg;
  cfg.seed = 2;
  auto r = finetune(pruned, data, cfg, 1);
  CHECK(r.log.size() == 1);
  CHECK(std::isfinite(r.log[0].train_loss));
  CHECK(!params_equal(r.model, pruned));  // weights moved
}

TEST_CASE("evaluate is deterministic and oracle estimates sit near the cap") {
  auto g = build_toy_sepnet(tiny_config());
  auto data = tiny_data(2);
  auto a = evaluate(g, data.test, "toy");
  auto b = evaluate(g, data.test, "toy");
  REQUIRE(a.utterances.size() == b.utterances.size());
  for (std::size_t i = 0; i < a.utterances.size(); ++i) {
    CHECK(a.utterances[i].sdr_i == b.utterances[i].sdr_i);
    CHECK(a.utterances[i].si_sdr_i == b.utterances[i].si_sdr_i);
  }
  // Aggregate means equal hand-averaged per-utterance values.
  double m = 0;
  for (const auto& u : a.utterances) m += u.si_sdr_i;
  CHECK(a.mean_si_sdr_i == doctest::Approx(m / a.utterances.size()).epsilon(1e-12));
  CHECK(a.params > 0);
  CHECK(a.macs > 0);

  const std::string csv = eval_records_csv({a});
  CHECK(csv.rfind("Model,Params,MACs,SDRi,SI-SDRi\n", 0) == 0);
  const std::string js = eval_record_json(a);
  CHECK(js.find("\"mean_si_sdr_i\"") != std::string::npos);
}

TEST_CASE("joint_optimize: identity at 0 iterations, weights move after 1") {
  auto g = build_toy_sepnet(tiny_config());
  auto data = tiny_data(2);
  auto ms = init_masks(g, 0.7, 1.0, 21);
  auto zero = joint_optimize(g, ms, data.train, 0);
  CHECK(params_equal(zero.model, g));
  for (const auto& [gid, gm] : zero.masks.masks) {
    const auto& orig = ms.masks.at(gid);
    CHECK(std::memcmp(gm.logit_keep.data(), orig.logit_keep.data(),
                      gm.logit_keep.size() * sizeof(float)) == 0);
  }
  auto one = joint_optimize(g, ms, data.train, 1);
  CHECK(!params_equal(one.model, g));  // weights not frozen here
}
