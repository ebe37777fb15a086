#include "sepprune/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

#include "sepprune/error.hpp"
#include "sepprune/rng.hpp"

namespace sepprune {

namespace {

double rms(const std::vector<double>& x) {
  double s = 0;
  for (double v : x) s += v * v;
  return std::sqrt(s / static_cast<double>(x.size()));
}

void scale_to_unit_rms(std::vector<double>& x) {
  const double r = rms(x);
  if (r > 0)
    for (double& v : x) v /= r;
}

// Windowed-sinc FIR bandpass, Hamming window, odd tap count.
std::vector<double> bandpass_taps(double lo_hz, double hi_hz, int sample_rate,
                                  int taps) {
  const double w1 = 2.0 * M_PI * lo_hz / sample_rate;
  const double w2 = 2.0 * M_PI * hi_hz / sample_rate;
  const int M = (taps - 1) / 2;
  std::vector<double> h(taps);
  for (int n = 0; n < taps; ++n) {
    const int d = n - M;
    double v;
    if (d == 0)
      v = (w2 - w1) / M_PI;
    else
      v = (std::sin(w2 * d) - std::sin(w1 * d)) / (M_PI * d);
    const double win = 0.54 - 0.46 * std::cos(2.0 * M_PI * n / (taps - 1));
    h[n] = v * win;
  }
  return h;
}

std::vector<double> convolve_same(const std::vector<double>& x,
                                  const std::vector<double>& h) {
  const int N = static_cast<int>(x.size());
  const int M = static_cast<int>(h.size() - 1) / 2;
  std::vector<double> y(x.size(), 0.0);
  for (int t = 0; t < N; ++t) {
    double s = 0;
    for (int n = 0; n < static_cast<int>(h.size()); ++n) {
      const int i = t - n + M;
      if (i >= 0 && i < N) s += h[n] * x[i];
    }
    y[t] = s;
  }
  return y;
}

}  // namespace

AudioBatch synth_utterance(std::uint64_t seed, const SynthParams& p) {
  if (p.samples < 256)
    throw InvalidArgumentError("synth_utterance: need at least 256 samples");
  if (p.source_snr_lo > p.source_snr_hi || (p.add_noise && p.noise_snr_lo > p.noise_snr_hi))
    throw InvalidArgumentError("synth_utterance: SNR range lo > hi");

  Rng rng(seed);
  const int T = p.samples;
  const double fs = p.sample_rate;

  // Speaker A: three harmonics with slow amplitude envelopes.
  std::vector<double> a(T, 0.0);
  for (int i = 0; i < 3; ++i) {
    const double f = rng.uniform(100.0, 1000.0);
    const double ph = rng.uniform(0.0, 2.0 * M_PI);
    const double w = rng.uniform(0.5, 1.0);
    const double fe = rng.uniform(0.25, 2.0);
    const double pe = rng.uniform(0.0, 2.0 * M_PI);
    for (int t = 0; t < T; ++t) {
      const double env = 0.5 + 0.5 * std::sin(2.0 * M_PI * fe * t / fs + pe);
      a[t] += w * env * std::sin(2.0 * M_PI * f * t / fs + ph);
    }
  }
  scale_to_unit_rms(a);

  // Speaker B: band-limited noise, 1-3 kHz.
  std::vector<double> b_raw(T);
  for (double& v : b_raw) v = rng.normal();
  auto b = convolve_same(b_raw, bandpass_taps(1000.0, 3000.0, p.sample_rate, 129));
  scale_to_unit_rms(b);

  AudioBatch out;
  out.batch = 1;
  out.speakers = 2;
  out.samples = T;
  out.sample_rate = p.sample_rate;
  out.seed = seed;
  out.source_snr_db = rng.uniform(p.source_snr_lo, p.source_snr_hi);
  for (double& v : b) v *= std::pow(10.0, -out.source_snr_db / 20.0);

  std::vector<double> noise;
  if (p.add_noise) {
    out.has_noise = true;
    out.noise_snr_db = rng.uniform(p.noise_snr_lo, p.noise_snr_hi);
    noise.resize(T);
    for (double& v : noise) v = rng.normal();
    scale_to_unit_rms(noise);
    double pmix = 0;
    for (int t = 0; t < T; ++t) {
      const double m = a[t] + b[t];
      pmix += m * m;
    }
    pmix /= T;
    const double k = std::sqrt(pmix) * std::pow(10.0, -out.noise_snr_db / 20.0);
    for (double& v : noise) v *= k;
  }

  double peak = 0;
  for (int t = 0; t < T; ++t) {
    const double x = a[t] + b[t] + (out.has_noise ? noise[t] : 0.0);
    peak = std::max({peak, std::fabs(x), std::fabs(a[t]), std::fabs(b[t])});
    if (out.has_noise) peak = std::max(peak, std::fabs(noise[t]));
  }
  const double k = peak > 0 ? 0.9 / peak : 1.0;

  out.sources.resize(static_cast<std::size_t>(2) * T);
  out.mixture.resize(T);
  if (out.has_noise) out.noise.resize(T);
  for (int t = 0; t < T; ++t) {
    const float s0 = static_cast<float>(a[t] * k);
    const float s1 = static_cast<float>(b[t] * k);
    out.sources[t] = s0;
    out.sources[T + t] = s1;
    float x = s0 + s1;
    if (out.has_noise) {
      const float n = static_cast<float>(noise[t] * k);
      out.noise[t] = n;
      x += n;
    }
    out.mixture[t] = x;
  }
  return out;
}

float mixture_residual(const AudioBatch& b) {
  float worst = 0.0f;
  const int T = b.samples;
  for (int bb = 0; bb < b.batch; ++bb)
    for (int t = 0; t < T; ++t) {
      float s = 0.0f;
      for (int c = 0; c < b.speakers; ++c)
        s += b.sources[(static_cast<std::size_t>(bb) * b.speakers + c) * T + t];
      if (b.has_noise) s += b.noise[static_cast<std::size_t>(bb) * T + t];
      worst = std::max(worst,
                       std::fabs(b.mixture[static_cast<std::size_t>(bb) * T + t] - s));
    }
  return worst;
}

AudioBatch stack_batches(const std::vector<AudioBatch>& items) {
  if (items.empty()) throw InvalidArgumentError("stack_batches: empty input");
  AudioBatch out = items[0];
  for (std::size_t i = 1; i < items.size(); ++i) {
    const AudioBatch& b = items[i];
    if (b.samples != out.samples || b.speakers != out.speakers ||
        b.has_noise != out.has_noise)
      throw InvalidArgumentError("stack_batches: mismatched shapes");
    out.batch += b.batch;
    out.mixture.insert(out.mixture.end(), b.mixture.begin(), b.mixture.end());
    out.sources.insert(out.sources.end(), b.sources.begin(), b.sources.end());
    out.noise.insert(out.noise.end(), b.noise.begin(), b.noise.end());
  }
  return out;
}

DatasetSplits make_dataset(const DatasetConfig& cfg) {
  if (cfg.n_train < 1 || cfg.n_val < 1 || cfg.n_test < 1)
    throw InvalidArgumentError("make_dataset: split sizes must be >= 1");
  const std::uint64_t t0 = cfg.train_seed_start.value_or(cfg.base_seed);
  const std::uint64_t v0 = cfg.val_seed_start.value_or(t0 + cfg.n_train);
  const std::uint64_t s0 = cfg.test_seed_start.value_or(v0 + cfg.n_val);
  struct Range {
    std::uint64_t lo, hi;
  };
  const Range ranges[3] = {{t0, t0 + cfg.n_train},
                           {v0, v0 + cfg.n_val},
                           {s0, s0 + cfg.n_test}};
  for (int i = 0; i < 3; ++i)
    for (int j = i + 1; j < 3; ++j)
      if (ranges[i].lo < ranges[j].hi && ranges[j].lo < ranges[i].hi)
        throw InvalidArgumentError("make_dataset: overlapping seed ranges");

  auto build = [&](const char* name, std::uint64_t lo, int n) {
    DatasetManifest m;
    m.split = name;
    m.params = cfg.synth;
    m.utterances.reserve(n);
    for (int i = 0; i < n; ++i) {
      // Synthesize once to record the drawn SNRs in the descriptor.
      AudioBatch b = synth_utterance(lo + i, cfg.synth);
      UtteranceDesc d;
      d.seed = lo + i;
      d.samples = cfg.synth.samples;
      d.snr_db = b.source_snr_db;
      if (b.has_noise) d.noise_snr_db = b.noise_snr_db;
      m.utterances.push_back(d);
    }
    return m;
  };
  DatasetSplits out;
  out.train = build("train", t0, cfg.n_train);
  out.val = build("val", v0, cfg.n_val);
  out.test = build("test", s0, cfg.n_test);
  return out;
}

AudioBatch materialize(const DatasetManifest& m, std::size_t index) {
  if (index >= m.utterances.size())
    throw InvalidArgumentError("materialize: index out of range");
  SynthParams p = m.params;
  p.samples = m.utterances[index].samples;
  return synth_utterance(m.utterances[index].seed, p);
}

void save_manifest(const DatasetManifest& m, const std::string& path) {
  std::ofstream f(path);
  if (!f) throw InvalidArgumentError("save_manifest: cannot open " + path);
  f << "split " << m.split << "\n";
  f << "sample_rate " << m.params.sample_rate << "\n";
  f << "samples " << m.params.samples << "\n";
  f << "source_snr " << m.params.source_snr_lo << " " << m.params.source_snr_hi << "\n";
  if (m.params.add_noise)
    f << "noise_snr " << m.params.noise_snr_lo << " " << m.params.noise_snr_hi << "\n";
  char line[128];
  for (const auto& u : m.utterances) {
    if (u.noise_snr_db)
      std::snprintf(line, sizeof line, "utt %llu %d %.6f %.6f",
                    static_cast<unsigned long long>(u.seed), u.samples, u.snr_db,
                    *u.noise_snr_db);
    else
      std::snprintf(line, sizeof line, "utt %llu %d %.6f",
                    static_cast<unsigned long long>(u.seed), u.samples, u.snr_db);
    f << line << "\n";
  }
}

DatasetManifest load_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw InvalidArgumentError("load_manifest: cannot open " + path);
  DatasetManifest m;
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream is(line);
    std::string key;
    is >> key;
    if (key == "split") {
      is >> m.split;
    } else if (key == "sample_rate") {
      is >> m.params.sample_rate;
    } else if (key == "samples") {
      is >> m.params.samples;
    } else if (key == "source_snr") {
      is >> m.params.source_snr_lo >> m.params.source_snr_hi;
    } else if (key == "noise_snr") {
      m.params.add_noise = true;
      is >> m.params.noise_snr_lo >> m.params.noise_snr_hi;
    } else if (key == "utt") {
      UtteranceDesc d;
      unsigned long long seed;
      is >> seed >> d.samples >> d.snr_db;
      d.seed = seed;
      double nsnr;
      if (is >> nsnr) d.noise_snr_db = nsnr;
      m.utterances.push_back(d);
    } else if (!key.empty()) {
      throw InvalidArgumentError("load_manifest: unknown key '" + key + "'");
    }
  }
  return m;
}

// ---------------------------------------------------------------------------
// WAV PCM16 mono.
// ---------------------------------------------------------------------------
namespace {

void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}

std::uint32_t get_u32(const std::string& s, std::size_t at) {
  if (at + 4 > s.size()) throw WavHeaderError("wav: truncated file");
  std::uint32_t v = 0;
  for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s[at + i]);
  return v;
}
std::uint16_t get_u16(const std::string& s, std::size_t at) {
  if (at + 2 > s.size()) throw WavHeaderError("wav: truncated file");
  return static_cast<std::uint16_t>(static_cast<unsigned char>(s[at]) |
                                    (static_cast<unsigned char>(s[at + 1]) << 8));
}

}  // namespace

void write_wav(const std::string& path, std::span<const float> samples,
               int sample_rate) {
  std::string out;
  const std::uint32_t data_bytes = static_cast<std::uint32_t>(samples.size() * 2);
  out += "RIFF";
  put_u32(out, 36 + data_bytes);
  out += "WAVEfmt ";
  put_u32(out, 16);
  put_u16(out, 1);  // PCM
  put_u16(out, 1);  // mono
  put_u32(out, static_cast<std::uint32_t>(sample_rate));
  put_u32(out, static_cast<std::uint32_t>(sample_rate * 2));
  put_u16(out, 2);
  put_u16(out, 16);
  out += "data";
  put_u32(out, data_bytes);
  for (float v : samples) {
    const double clamped = std::clamp(static_cast<double>(v), -1.0, 1.0);
    long q = std::lround(clamped * 32768.0);
    q = std::clamp(q, -32768L, 32767L);
    put_u16(out, static_cast<std::uint16_t>(static_cast<std::int16_t>(q)));
  }
  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidArgumentError("write_wav: cannot open " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
}

WavData load_wav(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidArgumentError("load_wav: cannot open " + path);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  if (s.size() < 12 || s.compare(0, 4, "RIFF") != 0 || s.compare(8, 4, "WAVE") != 0)
    throw WavHeaderError("wav: not a RIFF/WAVE file");

  WavData out;
  bool have_fmt = false;
  std::size_t at = 12;
  while (at + 8 <= s.size()) {
    const std::string id = s.substr(at, 4);
    const std::uint32_t len = get_u32(s, at + 4);
    const std::size_t body = at + 8;
    if (body + len > s.size()) throw WavHeaderError("wav: truncated chunk '" + id + "'");
    if (id == "fmt ") {
      if (len < 16) throw WavHeaderError("wav: short fmt chunk");
      const std::uint16_t format = get_u16(s, body);
      const std::uint16_t channels = get_u16(s, body + 2);
      out.sample_rate = static_cast<int>(get_u32(s, body + 4));
      const std::uint16_t bits = get_u16(s, body + 14);
      if (format != 1 || bits != 16)
        throw WavEncodingError("wav: only PCM 16-bit supported");
      if (channels != 1) throw WavChannelError("wav: only mono supported");
      have_fmt = true;
    } else if (id == "data") {
      if (!have_fmt) throw WavHeaderError("wav: data chunk before fmt");
      out.samples.reserve(len / 2);
      for (std::size_t i = 0; i + 1 < len; i += 2) {
        const std::int16_t q = static_cast<std::int16_t>(get_u16(s, body + i));
        out.samples.push_back(static_cast<float>(q) / 32768.0f);
      }
      return out;
    }
    at = body + len + (len & 1);
  }
  throw WavHeaderError("wav: missing data chunk");
}

}  // namespace sepprune
