#pragma once

#include <memory>

#include "fusionseg/dataset.hpp"
#include "fusionseg/model/edge_module.hpp"
#include "fusionseg/model/fusion_decoder.hpp"
#include "fusionseg/model/local_encoder.hpp"
#include "fusionseg/model/semantic_encoder.hpp"

namespace fusionseg {

// The full dual-encoder segmentation network. All parameters are registered
// at construction in a fixed order, so the parameter name set depends only on
// the configuration; the use_* flags switch data flow at forward time.
class FusionNet {
 public:
  FusionNet(const ModelConfig& cfg, uint64_t init_seed);

  struct Output {
    Tensor logits;     // [K,H,W]
    Tensor edge_pred;  // [1,H,W] probabilities; undefined when the edge module is off
  };
  Output forward(const Tensor& image, const Tensor& canny, Rng* drop_rng = nullptr) const;

  // Inference helper: argmax labels for one sample (no graph recorded).
  LabelMap segment_slice(const std::vector<double>& image, int h, int w) const;
  Tensor forward_logits(const std::vector<double>& image, int h, int w) const;

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }
  const SemanticEncoder& semantic() const { return *semantic_; }
  const LocalEncoder& local() const { return *local_; }
  const EdgeModule& edge() const { return *edge_; }
  const FusionDecoder& decoder() const { return *decoder_; }

  static Tensor image_tensor(const std::vector<double>& image, int h, int w);

 private:
  ModelConfig cfg_;
  ParamStore params_;
  std::unique_ptr<SemanticEncoder> semantic_;
  std::unique_ptr<LocalEncoder> local_;
  std::unique_ptr<EdgeModule> edge_;
  std::unique_ptr<FusionModule> fusion_;
  std::unique_ptr<FusionDecoder> decoder_;
};

}  // namespace fusionseg
