#pragma once

#include <string>

#include "sepprune/model.hpp"

namespace sepprune {

struct CheckpointMeta {
  int epoch = 0;
  bool has_best = false;
  double best_val_sisdri = 0.0;
};

// Binary layout: "SEPP" magic, u16 version, u32-length-prefixed JSON graph
// description (including training metadata and any prune audit), parameter
// arrays as float32 little-endian, trailing CRC32 over everything before it.
void save_checkpoint(const ModelGraph& graph, const std::string& path,
                     const CheckpointMeta& meta = {});

struct LoadedCheckpoint {
  ModelGraph graph;
  CheckpointMeta meta;
};

LoadedCheckpoint load_checkpoint(const std::string& path);

// Graph JSON description used inside checkpoints (also handy for manifests).
std::string graph_to_json(const ModelGraph& graph);
ModelGraph graph_from_json(const std::string& json_text);

}  // namespace sepprune
