#pragma once

#include <string>
#include <vector>

#include "sepprune/model.hpp"

namespace sepprune {

// Structural computational analysis. All counts are exact integers at batch
// size 1. Cost is reported in multiply-accumulates (MACs) under this
// artifact's pinned convention:
//   conv1d            params Cout*(Cin/g)*K (+Cout bias)   macs Cout*(Cin/g)*K*Lout
//   conv_transpose1d  params Cin*Cout*K (+Cout bias)       macs Cin*Cout*K*Lout
//   channel_norm      params 2C                            macs 4*C*L
//   prelu             params C                             macs C*L
//   relu / add_junction / elementwise_mul      0 params    macs = element count
//   split_masks       0 params                             macs = out element count
// Shared parameter arrays are counted once, on the first layer that uses
// them; later users report 0 params for that array.
struct LayerProfile {
  std::string name;
  LayerKind kind;
  Component component;
  long long params = 0;
  long long macs = 0;
  int out_length = 0;
};

struct ComponentTotals {
  long long params = 0;
  long long macs = 0;
};

struct ProfileReport {
  std::vector<LayerProfile> layers;
  ComponentTotals encoder, separator, decoder, total;
  int input_length = 0;

  const ComponentTotals& component(Component c) const;
  double param_ratio(Component c) const;
  double macs_ratio(Component c) const;
};

ProfileReport profile(const ModelGraph& graph, int input_length_samples);

// Argmax over component MACs; ties broken by params, then by the fixed order
// encoder < separator < decoder.
Component heaviest_component(const ProfileReport& report);

enum class TimingMode { Forward, ForwardBackward };

// Mean wall-clock milliseconds over `runs` timed executions after 10 warm-up
// runs, on a deterministic synthetic input. Single-threaded.
double timing_harness_ms(const ModelGraph& graph, int input_length,
                         int runs = 1000, TimingMode mode = TimingMode::Forward);

// Table-style rendering. format_count(5.13e6) -> "5.13 M",
// format_macs(28.58e9) -> "28.58 GMac", format_ratio(0.8231) -> "82.31%".
std::string format_count(double value);
std::string format_macs(double value);
std::string format_ratio(double ratio);
std::string table1_row(const std::string& model_name, double total_params,
                       double total_macs, double sm_params, double sm_macs,
                       double param_ratio, double macs_ratio);

std::string report_to_csv(const ProfileReport& report);
std::string report_table1_csv(const ProfileReport& report,
                              const std::string& model_name);
std::string report_to_json(const ProfileReport& report,
                           const std::string& model_name);

}  // namespace sepprune
