#include "fusionseg/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <set>

namespace fusionseg {

using nlohmann::json;

namespace {
constexpr char kMagic[8] = {'F', 'S', 'E', 'G', 'C', 'K', 'P', '1'};

std::vector<unsigned char> payload_bytes(const Checkpoint& c) {
  std::vector<unsigned char> bytes;
  size_t total = 0;
  for (const auto& t : c.tensors) total += t.size() * sizeof(float);
  bytes.reserve(total);
  for (const auto& t : c.tensors) {
    const unsigned char* p = reinterpret_cast<const unsigned char*>(t.data());
    bytes.insert(bytes.end(), p, p + t.size() * sizeof(float));
  }
  return bytes;
}
}  // namespace

int64_t Checkpoint::total_elements() const {
  int64_t n = 0;
  for (const auto& t : tensors) n += static_cast<int64_t>(t.size());
  return n;
}

Checkpoint snapshot_model(const FusionNet& model, const json& train_config, int epoch) {
  Checkpoint c;
  c.model_config = model.config();
  c.train_config = train_config;
  c.epoch = epoch;
  for (const Tensor& p : model.params().all()) {
    c.names.push_back(p.name());
    c.shapes.push_back(p.shape());
    std::vector<float> f(p.values().size());
    for (size_t i = 0; i < f.size(); ++i) f[i] = static_cast<float>(p.values()[i]);
    c.tensors.push_back(std::move(f));
  }
  c.payload_digest = digest_hex(fnv1a64(payload_bytes(c).data(), payload_bytes(c).size()));
  return c;
}

void save_checkpoint(const std::string& path, const Checkpoint& ckpt) {
  json manifest;
  manifest["format_version"] = 1;
  manifest["epoch"] = ckpt.epoch;
  manifest["model_config"] = to_json(ckpt.model_config);
  manifest["train_config"] = ckpt.train_config;
  json params = json::array();
  int64_t offset = 0;
  for (size_t i = 0; i < ckpt.names.size(); ++i) {
    json p;
    p["name"] = ckpt.names[i];
    p["shape"] = ckpt.shapes[i];
    p["dtype"] = "f32";
    p["offset"] = offset;
    p["elements"] = ckpt.tensors[i].size();
    offset += static_cast<int64_t>(ckpt.tensors[i].size() * sizeof(float));
    params.push_back(p);
  }
  manifest["params"] = params;
  std::vector<unsigned char> payload = payload_bytes(ckpt);
  manifest["provenance"] = {
      {"payload_digest", digest_hex(fnv1a64(payload.data(), payload.size()))},
      {"base_digest", ckpt.base_digest},
      {"log_digest", ckpt.log_digest}};

  std::string mtext = manifest.dump();
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write checkpoint: " + path);
  f.write(kMagic, 8);
  uint64_t mlen = mtext.size();
  unsigned char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<unsigned char>((mlen >> (8 * i)) & 0xff);
  f.write(reinterpret_cast<const char*>(lenbuf), 8);
  f.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  f.write(reinterpret_cast<const char*>(payload.data()), static_cast<std::streamsize>(payload.size()));
  if (!f) throw std::runtime_error("checkpoint write failed: " + path);
}

Checkpoint load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open checkpoint: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kMagic, 8) != 0)
    throw ValidationError("not a checkpoint archive: " + path);
  unsigned char lenbuf[8];
  f.read(reinterpret_cast<char*>(lenbuf), 8);
  uint64_t mlen = 0;
  for (int i = 0; i < 8; ++i) mlen |= static_cast<uint64_t>(lenbuf[i]) << (8 * i);
  std::string mtext(mlen, '\0');
  f.read(mtext.data(), static_cast<std::streamsize>(mlen));
  if (!f) throw ValidationError("truncated checkpoint manifest: " + path);
  json manifest = json::parse(mtext);

  Checkpoint c;
  c.epoch = manifest.at("epoch").get<int>();
  c.model_config = model_config_from_json(manifest.at("model_config"));
  c.train_config = manifest.value("train_config", json::object());
  auto prov = manifest.at("provenance");
  c.payload_digest = prov.value("payload_digest", "");
  c.base_digest = prov.value("base_digest", "");
  c.log_digest = prov.value("log_digest", "");
  for (const auto& p : manifest.at("params")) {
    c.names.push_back(p.at("name").get<std::string>());
    c.shapes.push_back(p.at("shape").get<Shape>());
    size_t elements = p.at("elements").get<size_t>();
    std::vector<float> t(elements);
    f.read(reinterpret_cast<char*>(t.data()),
           static_cast<std::streamsize>(elements * sizeof(float)));
    if (!f) throw ValidationError("truncated checkpoint payload: " + path);
    c.tensors.push_back(std::move(t));
  }
  std::vector<unsigned char> payload = payload_bytes(c);
  std::string digest = digest_hex(fnv1a64(payload.data(), payload.size()));
  if (!c.payload_digest.empty() && digest != c.payload_digest)
    throw ValidationError("checkpoint payload digest mismatch: " + path);
  return c;
}

void apply_checkpoint(const Checkpoint& ckpt, FusionNet& model) {
  std::set<std::string> have, want;
  for (const Tensor& p : model.params().all()) want.insert(p.name());
  for (const auto& n : ckpt.names) have.insert(n);
  if (have != want) {
    std::string missing, extra;
    for (const auto& n : want)
      if (!have.count(n)) missing += " " + n;
    for (const auto& n : have)
      if (!want.count(n)) extra += " " + n;
    throw ValidationError(cat("checkpoint/model parameter sets differ; missing:[", missing,
                              " ] extra:[", extra, " ]"));
  }
  for (size_t i = 0; i < ckpt.names.size(); ++i) {
    Tensor p = model.params().find(ckpt.names[i]);
    if (p.shape() != ckpt.shapes[i])
      throw ValidationError(cat("checkpoint tensor ", ckpt.names[i], " has shape ",
                                shape_str(ckpt.shapes[i]), ", model expects ",
                                shape_str(p.shape())));
    for (size_t j = 0; j < p.values().size(); ++j)
      p.values()[j] = static_cast<double>(ckpt.tensors[i][j]);
  }
}

FusionNet model_from_checkpoint(const Checkpoint& ckpt) {
  FusionNet model(ckpt.model_config, 0);
  apply_checkpoint(ckpt, model);
  return model;
}

}  // namespace fusionseg
