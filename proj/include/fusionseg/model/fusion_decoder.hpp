#pragma once

#include <vector>

#include "fusionseg/config.hpp"
#include "fusionseg/nn.hpp"

namespace fusionseg {

// Pyramid-style fusion of the two encoder outputs and the edge features:
// 1x1 and 3x3 branches on the concatenated encoder maps plus a pooled branch
// carrying the downsampled edge features, all resampled to a common size and
// concatenated (three receptive fields).
class FusionModule {
 public:
  FusionModule() = default;
  FusionModule(ParamStore& ps, Rng& rng, const ModelConfig& cfg, int semantic_ch, int local_ch,
               int edge_ch);

  Tensor operator()(const Tensor& semantic_fm, const Tensor& local_fm, const Tensor& edge_fm) const;
  int out_channels() const { return 3 * width_; }
  static constexpr int kBranches = 3;

 private:
  int width_ = 0;
  Conv2dLayer branch_1x1_, branch_3x3_, branch_pool_;
};

// UNet-style upsampling decoder. Every stage doubles resolution, concatenates
// the 1x1-projected same-size taps from both encoders, and applies two 3x3
// conv-norm-activation pairs; a final 1x1 maps to class logits. Skips are
// individually switchable so ablations keep the identical parameter set.
class FusionDecoder {
 public:
  FusionDecoder() = default;
  FusionDecoder(ParamStore& ps, Rng& rng, const ModelConfig& cfg, int fused_ch);

  Tensor decode(const Tensor& fused, const std::vector<Tensor>& semantic_skips,
                const std::vector<Tensor>& local_skips, bool use_semantic, bool use_local) const;

  int stages() const { return static_cast<int>(stage_convs1_.size()); }
  // Whether a semantic/local tap exists at decoder stage s (target stride
  // 2^(stages-1-s)); a function of the configuration alone.
  bool has_semantic_tap(int stage) const { return sem_tap_index_[static_cast<size_t>(stage)] >= 0; }
  bool has_local_tap(int stage) const { return loc_tap_index_[static_cast<size_t>(stage)] >= 0; }

 private:
  ModelConfig cfg_;
  std::vector<int> sem_tap_index_, loc_tap_index_;
  std::vector<Conv2dLayer> sem_proj_, loc_proj_;
  std::vector<Conv2dLayer> stage_convs1_, stage_convs2_;
  std::vector<GroupNormLayer> stage_norms1_, stage_norms2_;
  Conv2dLayer classifier_;
};

// Per-pixel class distribution; each pixel's probabilities sum to 1.
Tensor predict_probabilities(const Tensor& logits);

}  // namespace fusionseg
