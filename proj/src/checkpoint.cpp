#include "sepprune/checkpoint.hpp"

#include <zlib.h>

#include <bit>
#include <cstdint>
#include <fstream>
#include <json.hpp>

#include "sepprune/error.hpp"

namespace sepprune {

namespace {

constexpr char kMagic[4] = {'S', 'E', 'P', 'P'};
constexpr std::uint16_t kVersion = 1;

using nlohmann::json;

json layer_to_json(const LayerSpec& l) {
  json j;
  j["name"] = l.name;
  j["kind"] = to_string(l.kind);
  j["in"] = l.in_channels;
  j["out"] = l.out_channels;
  j["kernel"] = l.kernel;
  j["stride"] = l.stride;
  j["dilation"] = l.dilation;
  j["padding"] = l.padding;
  j["groups"] = l.groups;
  j["split_index"] = l.split_index;
  j["component"] = to_string(l.component);
  j["prunable"] = l.prunable;
  j["inputs"] = l.inputs;
  j["weight"] = l.weight_name;
  j["bias"] = l.bias_name;
  return j;
}

LayerSpec layer_from_json(const json& j) {
  LayerSpec l;
  l.name = j.at("name").get<std::string>();
  l.kind = layer_kind_from_string(j.at("kind").get<std::string>());
  l.in_channels = j.at("in").get<int>();
  l.out_channels = j.at("out").get<int>();
  l.kernel = j.at("kernel").get<int>();
  l.stride = j.at("stride").get<int>();
  l.dilation = j.at("dilation").get<int>();
  l.padding = j.at("padding").get<int>();
  l.groups = j.at("groups").get<int>();
  l.split_index = j.at("split_index").get<int>();
  l.component = component_from_string(j.at("component").get<std::string>());
  l.prunable = j.at("prunable").get<bool>();
  l.inputs = j.at("inputs").get<std::vector<std::string>>();
  l.weight_name = j.at("weight").get<std::string>();
  l.bias_name = j.at("bias").get<std::string>();
  return l;
}

void put_u16(std::string& s, std::uint16_t v) {
  s.push_back(static_cast<char>(v & 0xff));
  s.push_back(static_cast<char>((v >> 8) & 0xff));
}
void put_u32(std::string& s, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
void put_u64(std::string& s, std::uint64_t v) {
  for (int i = 0; i < 8; ++i) s.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

class Reader {
 public:
  Reader(const std::string& s) : s_(s) {}
  std::size_t at() const { return at_; }
  void need(std::size_t n) const {
    if (at_ + n > s_.size()) throw CheckpointTruncatedError("checkpoint: truncated file");
  }
  std::uint16_t u16() {
    need(2);
    const auto v = static_cast<std::uint16_t>(
        static_cast<unsigned char>(s_[at_]) |
        (static_cast<unsigned char>(s_[at_ + 1]) << 8));
    at_ += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s_[at_ + i]);
    at_ += 4;
    return v;
  }
  std::uint64_t u64() {
    need(8);
    std::uint64_t v = 0;
    for (int i = 7; i >= 0; --i) v = (v << 8) | static_cast<unsigned char>(s_[at_ + i]);
    at_ += 8;
    return v;
  }
  std::string bytes(std::size_t n) {
    need(n);
    std::string out = s_.substr(at_, n);
    at_ += n;
    return out;
  }

 private:
  const std::string& s_;
  std::size_t at_ = 0;
};

}  // namespace

std::string graph_to_json(const ModelGraph& g) {
  json j;
  j["speakers"] = g.speakers;
  j["outputs"] = g.outputs;
  json layers = json::array();
  for (const LayerSpec& l : g.layers) layers.push_back(layer_to_json(l));
  j["layers"] = std::move(layers);
  json groups = json::array();
  for (const DependencyGroup& grp : g.groups) {
    json ports = json::array();
    for (const PortRef& p : grp.ports) ports.push_back(json::array({p.layer, p.port}));
    groups.push_back(
        {{"id", grp.id}, {"channels", grp.channels}, {"prunable", grp.prunable},
         {"ports", std::move(ports)}});
  }
  j["groups"] = std::move(groups);
  if (!g.prune_audit.empty()) j["prune_audit"] = json::parse(g.prune_audit);
  return j.dump();
}

ModelGraph graph_from_json(const std::string& text) {
  json j = json::parse(text);
  ModelGraph g;
  g.speakers = j.at("speakers").get<int>();
  g.outputs = j.at("outputs").get<std::vector<std::string>>();
  for (const json& lj : j.at("layers")) g.layers.push_back(layer_from_json(lj));
  for (const json& gj : j.at("groups")) {
    DependencyGroup grp;
    grp.id = gj.at("id").get<std::string>();
    grp.channels = gj.at("channels").get<int>();
    grp.prunable = gj.at("prunable").get<bool>();
    for (const json& pj : gj.at("ports"))
      grp.ports.push_back({pj.at(0).get<std::string>(), pj.at(1).get<int>()});
    g.groups.push_back(std::move(grp));
  }
  if (j.contains("prune_audit")) g.prune_audit = j.at("prune_audit").dump();
  return g;
}

void save_checkpoint(const ModelGraph& g, const std::string& path,
                     const CheckpointMeta& meta) {
  json desc = json::parse(graph_to_json(g));
  desc["meta"] = {{"epoch", meta.epoch},
                  {"has_best", meta.has_best},
                  {"best_val_sisdri", meta.best_val_sisdri}};
  const std::string desc_text = desc.dump();

  std::string out(kMagic, 4);
  put_u16(out, kVersion);
  put_u32(out, static_cast<std::uint32_t>(desc_text.size()));
  out += desc_text;
  put_u32(out, static_cast<std::uint32_t>(g.parameters.size()));
  for (const auto& [name, values] : g.parameters) {
    put_u16(out, static_cast<std::uint16_t>(name.size()));
    out += name;
    put_u64(out, values.size());
    for (float v : values) put_u32(out, std::bit_cast<std::uint32_t>(v));
  }
  const auto crc = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(out.data()),
            static_cast<uInt>(out.size())));
  put_u32(out, crc);

  std::ofstream f(path, std::ios::binary);
  if (!f) throw InvalidArgumentError("save_checkpoint: cannot open " + path);
  f.write(out.data(), static_cast<std::streamsize>(out.size()));
  if (!f) throw InvalidArgumentError("save_checkpoint: write failed for " + path);
}

LoadedCheckpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw InvalidArgumentError("load_checkpoint: cannot open " + path);
  std::string s((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());

  if (s.size() < 10) throw CheckpointTruncatedError("checkpoint: file too small");
  if (s.compare(0, 4, kMagic, 4) != 0)
    throw CheckpointFormatError("checkpoint: bad magic");

  Reader r(s);
  r.bytes(4);
  const std::uint16_t version = r.u16();
  if (version != kVersion)
    throw CheckpointVersionError("checkpoint: unsupported version " +
                                 std::to_string(version));

  // Walk the declared structure first so truncation is reported as such,
  // then verify the checksum before trusting any payload bytes.
  const std::uint32_t desc_len = r.u32();
  const std::string desc_text = r.bytes(desc_len);
  const std::uint32_t n_params = r.u32();
  struct RawParam {
    std::string name;
    std::vector<float> values;
  };
  std::vector<RawParam> raw;
  raw.reserve(n_params);
  for (std::uint32_t i = 0; i < n_params; ++i) {
    RawParam p;
    p.name = r.bytes(r.u16());
    const std::uint64_t count = r.u64();
    r.need(count * 4);
    p.values.reserve(count);
    for (std::uint64_t k = 0; k < count; ++k)
      p.values.push_back(std::bit_cast<float>(r.u32()));
    raw.push_back(std::move(p));
  }
  const std::size_t payload_end = r.at();
  const std::uint32_t stored_crc = r.u32();
  const auto computed = static_cast<std::uint32_t>(
      crc32(0L, reinterpret_cast<const Bytef*>(s.data()), static_cast<uInt>(payload_end)));
  if (stored_crc != computed)
    throw CheckpointChecksumError("checkpoint: CRC mismatch");

  LoadedCheckpoint out;
  try {
    nlohmann::json desc = nlohmann::json::parse(desc_text);
    out.graph = graph_from_json(desc.dump());
    if (desc.contains("meta")) {
      out.meta.epoch = desc["meta"].value("epoch", 0);
      out.meta.has_best = desc["meta"].value("has_best", false);
      out.meta.best_val_sisdri = desc["meta"].value("best_val_sisdri", 0.0);
    }
  } catch (const nlohmann::json::exception& e) {
    throw CheckpointFormatError(std::string("checkpoint: bad graph description: ") +
                                e.what());
  }
  for (auto& p : raw) out.graph.parameters[p.name] = std::move(p.values);
  out.graph.validate();
  return out;
}

}  // namespace sepprune
