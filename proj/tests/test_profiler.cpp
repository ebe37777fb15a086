#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "sepprune/error.hpp"
#include "sepprune/profiler.hpp"

using namespace sepprune;

namespace {

// Closed-form counts for the toy backbone, written independently of the
// profiler's graph walk.
struct ClosedForm {
  long long params = 0, macs = 0, sep_params = 0, sep_macs = 0, enc_params = 0,
            enc_macs = 0, dec_params = 0, dec_macs = 0;
};

ClosedForm toy_closed_form(const ToySepNetConfig& c, int T) {
  const long long E = c.encoder_channels, H = c.block_channels, R = c.blocks;
  const long long K = c.kernel, C = c.speakers, Ke = c.encoder_kernel,
                  Se = c.encoder_stride;
  const long long pad = std::max<long long>(0, (Ke - Se) / 2);
  const long long Le = (T + 2 * pad - Ke) / Se + 1;
  const long long Td = (Le - 1) * Se - 2 * pad + Ke;

  ClosedForm f;
  f.enc_params = E * Ke + E;
  f.enc_macs = E * Ke * Le;
  f.sep_params = R * (E * H + H + H * K + H + 2 * H + H + H * E + E) +
                 (E * (C * E) + C * E);
  f.sep_macs = R * (E * H * Le + H * K * Le + 4 * H * Le + H * Le + H * E * Le + E * Le) +
               E * (C * E) * Le + C * E * Le /* split sigmoids */ +
               C * E * Le /* per-speaker mask multiply */;
  f.dec_params = E * Ke + 1;  // shared across speakers, counted once
  f.dec_macs = C * (E * Ke * Td);
  f.params = f.enc_params + f.sep_params + f.dec_params;
  f.macs = f.enc_macs + f.sep_macs + f.dec_macs;
  return f;
}

ProfileReport synthetic_report(long long e_macs, long long s_macs, long long d_macs,
                               long long e_params = 1, long long s_params = 1,
                               long long d_params = 1) {
  ProfileReport r;
  r.encoder = {e_params, e_macs};
  r.separator = {s_params, s_macs};
  r.decoder = {d_params, d_macs};
  r.total = {e_params + s_params + d_params, e_macs + s_macs + d_macs};
  return r;
}

}  // namespace

TEST_CASE("single conv1d counting formula") {
  ModelGraph g;
  LayerSpec l;
  l.name = "c";
  l.kind = LayerKind::Conv1d;
  l.in_channels = 1;
  l.out_channels = 1;
  l.kernel = 1;
  l.component = Component::Encoder;
  l.weight_name = "c.weight";
  l.bias_name = "c.bias";
  g.layers.push_back(l);
  g.outputs = {"c"};
  g.parameters["c.weight"] = {1.0f};
  g.parameters["c.bias"] = {0.0f};
  g.validate();
  auto rep = profile(g, 16000);
  CHECK(rep.total.params == 2);
  CHECK(rep.total.macs == 16000);
}

TEST_CASE("toy backbone matches the closed form exactly") {
  for (const auto& [cfg, T] : std::vector<std::pair<ToySepNetConfig, int>>{
           {ToySepNetConfig{}, 16000},
           {[] {
              ToySepNetConfig c;
              c.encoder_channels = 32;
              c.block_channels = 48;
              c.blocks = 2;
              return c;
            }(),
            4000}}) {
    auto g = build_toy_sepnet(cfg);
    auto rep = profile(g, T);
    auto f = toy_closed_form(cfg, T);
    CHECK(rep.total.params == f.params);
    CHECK(rep.total.macs == f.macs);
    CHECK(rep.encoder.params == f.enc_params);
    CHECK(rep.encoder.macs == f.enc_macs);
    CHECK(rep.separator.params == f.sep_params);
    CHECK(rep.separator.macs == f.sep_macs);
    CHECK(rep.decoder.params == f.dec_params);
    CHECK(rep.decoder.macs == f.dec_macs);
  }
}

TEST_CASE("additivity: totals equal the sum of per-layer rows") {
  auto g = build_toy_sepnet(ToySepNetConfig{});
  auto rep = profile(g, 16000);
  long long p = 0, m = 0;
  for (const auto& r : rep.layers) {
    p += r.params;
    m += r.macs;
  }
  CHECK(p == rep.total.params);
  CHECK(m == rep.total.macs);
  CHECK(rep.encoder.params + rep.separator.params + rep.decoder.params ==
        rep.total.params);
  CHECK(rep.encoder.macs + rep.separator.macs + rep.decoder.macs == rep.total.macs);
}

TEST_CASE("toy defaults: separator dominates") {
  auto g = build_toy_sepnet(ToySepNetConfig{});
  auto rep = profile(g, 16000);
  CHECK(rep.param_ratio(Component::Separator) > 0.80);
  CHECK(heaviest_component(rep) == Component::Separator);
}

TEST_CASE("heaviest_component tie rules") {
  CHECK(heaviest_component(synthetic_report(5, 5, 5)) == Component::Encoder);
  CHECK(heaviest_component(synthetic_report(1, 2, 9)) == Component::Decoder);
  CHECK(heaviest_component(synthetic_report(5, 5, 5, 1, 7, 1)) == Component::Separator);
}

TEST_CASE("macs scale with the input length per the counting formula") {
  auto g = build_toy_sepnet(ToySepNetConfig{});
  auto a = profile(g, 8000);
  auto b = profile(g, 16000);
  CHECK(a.total.params == b.total.params);
  auto fa = toy_closed_form(ToySepNetConfig{}, 8000);
  auto fb = toy_closed_form(ToySepNetConfig{}, 16000);
  CHECK(a.total.macs == fa.macs);
  CHECK(b.total.macs == fb.macs);
  CHECK(b.total.macs > a.total.macs);
}

TEST_CASE("profile rejects invalid lengths") {
  auto g = build_toy_sepnet(ToySepNetConfig{});
  CHECK_THROWS_AS(profile(g, 0), InvalidArgumentError);
  CHECK_THROWS_AS(profile(g, 4), InvalidArgumentError);  // shorter than the encoder kernel
}

TEST_CASE("table 1 style rendering") {
  CHECK(format_count(5.13e6) == "5.13 M");
  CHECK(format_macs(28.58e9) == "28.58 GMac");
  CHECK(format_ratio(0.8231) == "82.31%");
  const std::string row = table1_row("A-FRCNN-12", 5.13e6, 28.58e9, 4.22e6, 26.56e9,
                                     0.8231, 0.9294);
  CHECK(row == "A-FRCNN-12, 5.13 M, 28.58 GMac, 4.22 M, 26.56 GMac, 82.31%, 92.94%");
}

TEST_CASE("report serialization carries the table layout") {
  ToySepNetConfig c;
  c.encoder_channels = 8;
  c.block_channels = 8;
  c.blocks = 1;
  auto g = build_toy_sepnet(c);
  auto rep = profile(g, 1600);
  const std::string csv = report_table1_csv(rep, "toy");
  CHECK(csv.find("Model, Total Params, Total MACs") != std::string::npos);
  CHECK(csv.find("toy, ") != std::string::npos);
  const std::string full = report_to_csv(rep);
  CHECK(full.find("enc,conv1d,encoder,") != std::string::npos);
  const std::string js = report_to_json(rep, "toy");
  CHECK(js.find("\"macs_ratio\"") != std::string::npos);
}

TEST_CASE("timing harness basics") {
  ToySepNetConfig c;
  c.encoder_channels = 8;
  c.block_channels = 8;
  c.blocks = 1;
  auto g = build_toy_sepnet(c);
  CHECK_THROWS_AS(timing_harness_ms(g, 1024, 0), InvalidArgumentError);
  const double fwd = timing_harness_ms(g, 1024, 1);
  CHECK(fwd > 0.0);
  const double fwd5 = timing_harness_ms(g, 1024, 5, TimingMode::Forward);
  const double bwd5 = timing_harness_ms(g, 1024, 5, TimingMode::ForwardBackward);
  CHECK(bwd5 >= fwd5);
}
