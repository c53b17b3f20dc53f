#pragma once

#include <string>
#include <vector>

#include "fusionseg/config.hpp"
#include "fusionseg/model/network.hpp"

namespace fusionseg {

// Single-file archive: 8-byte magic, little-endian u64 manifest length, JSON
// manifest (param names/shapes/offsets, configs, provenance digests), then the
// raw little-endian float32 payload in manifest order. Deterministic byte
// layout: saving a loaded checkpoint reproduces the identical file.
struct Checkpoint {
  ModelConfig model_config;
  nlohmann::json train_config;  // snapshot, opaque here
  int epoch = 0;
  std::vector<std::string> names;
  std::vector<Shape> shapes;
  std::vector<std::vector<float>> tensors;
  std::string payload_digest;  // fnv1a64 hex of the payload bytes
  std::string base_digest;     // digest of the checkpoint this one was tuned from
  std::string log_digest;      // digest of the training log CSV

  int64_t total_elements() const;
};

Checkpoint snapshot_model(const FusionNet& model, const nlohmann::json& train_config, int epoch);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

// Copies parameters into a model built from the same configuration; a
// mismatched name set raises an error listing missing and extra keys.
void apply_checkpoint(const Checkpoint& ckpt, FusionNet& model);

// Convenience: build the model a checkpoint describes and load it.
FusionNet model_from_checkpoint(const Checkpoint& ckpt);

}  // namespace fusionseg
