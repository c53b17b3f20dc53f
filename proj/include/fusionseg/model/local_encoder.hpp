#pragma once

#include <vector>

#include "fusionseg/config.hpp"
#include "fusionseg/nn.hpp"

namespace fusionseg {

struct SEBottleNetConfig {
  int in_channels = 0;
  int bottleneck_channels = 0;
  int out_channels = 0;
  int se_reduction = 1;

  // Reduced width of the excitation bottleneck: floor division, at least 1.
  int reduced() const { return std::max(1, out_channels / se_reduction); }
  void validate() const {
    if (in_channels < 1 || bottleneck_channels < 1 || out_channels < 1)
      throw ConfigError("SEBottleNet: channel counts must be >= 1");
    if (bottleneck_channels > in_channels)
      throw ConfigError(cat("SEBottleNet: bottleneck ", bottleneck_channels, " > in ", in_channels));
    if (se_reduction < 1) throw ConfigError("SEBottleNet: se_reduction must be >= 1");
  }
};

// Eq.-level SE primitives. `se_scale` enforces the ChannelWeights invariant:
// every weight strictly inside (0,1).
Tensor se_squeeze(const Tensor& fm);                       // [C,H,W] -> [C]
Tensor se_scale(const Tensor& fm, const Tensor& weights);  // per-channel reweighting

struct SEBlock {
  LinearLayer fc1, fc2;

  SEBlock() = default;
  SEBlock(ParamStore& ps, Rng& rng, const std::string& name, int channels, int reduction);
  // e -> sigmoid(W2 relu(W1 e)), strictly in (0,1)
  Tensor excite(const Tensor& channel_means) const;
  Tensor operator()(const Tensor& fm) const { return se_scale(fm, excite(se_squeeze(fm))); }
};

// 1x1 reduce -> 3x3 -> 1x1 expand with squeeze-excitation on the expanded map
// before the residual addition; identity or 1x1-projected shortcut.
struct SEBottleNet {
  SEBottleNetConfig cfg;
  Conv2dLayer reduce, conv3, expand, shortcut;  // shortcut only when in != out
  GroupNormLayer n1, n2, n3;
  SEBlock se;
  bool bypass_se = false;

  SEBottleNet() = default;
  SEBottleNet(ParamStore& ps, Rng& rng, const std::string& name, const SEBottleNetConfig& cfg,
              bool bypass_se);
  Tensor operator()(const Tensor& x) const;
};

// Stem convolution plus local_stages x (SEBottleNet -> 2x2 max pool).
class LocalEncoder {
 public:
  LocalEncoder() = default;
  LocalEncoder(ParamStore& ps, Rng& rng, const ModelConfig& cfg);

  struct Output {
    Tensor local_fm;            // deepest map, after the final pooling
    std::vector<Tensor> skips;  // per-stage taps before pooling, shallow -> deep
  };
  Output forward(const Tensor& image) const;

  int out_channels() const { return out_channels_; }
  int stage_out_channels(int stage) const { return cfg_.local_base << (stage + 1); }

 private:
  ModelConfig cfg_;
  Conv2dLayer stem_;
  GroupNormLayer stem_norm_;
  std::vector<SEBottleNet> blocks_;
  int out_channels_ = 0;
};

}  // namespace fusionseg
