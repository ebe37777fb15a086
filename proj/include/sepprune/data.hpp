#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace sepprune {

// One synthesized (or loaded) utterance batch. Mixture is [B,1,T], sources
// are [B,C,T], optional noise is [B,1,T]. The stored mixture is exactly
// (sources summed in speaker order) + noise, evaluated in float.
struct AudioBatch {
  int batch = 1;
  int speakers = 2;
  int samples = 0;
  int sample_rate = 8000;
  std::vector<float> mixture;
  std::vector<float> sources;
  std::vector<float> noise;  // empty when absent
  std::uint64_t seed = 0;
  double source_snr_db = 0.0;
  double noise_snr_db = 0.0;
  bool has_noise = false;
};

struct SynthParams {
  int samples = 16000;
  int sample_rate = 8000;
  double source_snr_lo = -5.0;
  double source_snr_hi = 5.0;
  bool add_noise = false;
  double noise_snr_lo = 10.0;
  double noise_snr_hi = 20.0;
};

// Deterministic two-speaker toy mixture: speaker A is a sum of three seeded
// harmonics (100-1000 Hz) under slow random amplitude envelopes, speaker B is
// 1-3 kHz band-limited noise. Disjoint spectral support keeps the task
// learnable at desk scale. Relative level is drawn from the SNR range; all
// signals are jointly rescaled to peak 0.9.
AudioBatch synth_utterance(std::uint64_t seed, const SynthParams& params);

struct UtteranceDesc {
  std::uint64_t seed = 0;
  int samples = 0;
  double snr_db = 0.0;
  std::optional<double> noise_snr_db;
};

struct DatasetManifest {
  std::string split;
  SynthParams params;
  std::vector<UtteranceDesc> utterances;
};

struct DatasetConfig {
  int n_train = 512;
  int n_val = 64;
  int n_test = 64;
  std::uint64_t base_seed = 1;
  SynthParams synth;
  // Explicit per-split seed starts; defaults carve disjoint ranges from
  // base_seed. Overlapping ranges are rejected.
  std::optional<std::uint64_t> train_seed_start;
  std::optional<std::uint64_t> val_seed_start;
  std::optional<std::uint64_t> test_seed_start;
};

struct DatasetSplits {
  DatasetManifest train, val, test;
};

DatasetSplits make_dataset(const DatasetConfig& config);

// Regenerates one utterance of a manifest (bit-identical per descriptor).
AudioBatch materialize(const DatasetManifest& manifest, std::size_t index);

// Line-oriented manifest text format (one descriptor per line).
void save_manifest(const DatasetManifest& manifest, const std::string& path);
DatasetManifest load_manifest(const std::string& path);

// Max |mixture - (sum of sources + noise)| with the sum recomputed in float
// in the canonical order; zero for every synthesized batch.
float mixture_residual(const AudioBatch& batch);

// Concatenate B=1 batches along the batch axis (shapes must agree).
AudioBatch stack_batches(const std::vector<AudioBatch>& items);

// WAV PCM 16-bit mono.
void write_wav(const std::string& path, std::span<const float> samples,
               int sample_rate);
struct WavData {
  std::vector<float> samples;
  int sample_rate = 0;
};
WavData load_wav(const std::string& path);

}  // namespace sepprune
