#pragma once

#include <vector>

#include "fusionseg/config.hpp"
#include "fusionseg/model/local_encoder.hpp"
#include "fusionseg/nn.hpp"

namespace fusionseg {

// Gated excitation convolution unit: a sigmoid attention map computed from
// the projected encoder taps and the current edge stream, applied as a
// residual multiplicative gate.
struct GECUnit {
  SEBlock se;            // over concat(t', c', e) channels
  Conv2dLayer alpha_conv;  // 1x1 -> 1 channel
  Conv2dLayer gate_conv;   // 1x1, stream width preserved

  GECUnit() = default;
  GECUnit(ParamStore& ps, Rng& rng, const std::string& name, int stream_channels, int se_reduction);

  // alpha = sigmoid(C1x1(F_se(cat(t', c', e)))), strictly inside (0,1)
  Tensor attention(const Tensor& t_proj, const Tensor& c_proj, const Tensor& stream) const;
  // e' = C1x1((e * alpha) + e)
  Tensor apply(const Tensor& stream, const Tensor& alpha) const;
};

// Edge prediction stream over paired encoder pyramid levels. Shallow levels
// fold into the stream without gating; each deeper level passes one GEC. The
// Canny map concatenates with the last stream state to form the pre-head
// feature map shared with the fusion decoder.
class EdgeModule {
 public:
  EdgeModule() = default;
  EdgeModule(ParamStore& ps, Rng& rng, const ModelConfig& cfg);

  struct Output {
    Tensor edge_pred;  // [1,H,W] sigmoid probabilities
    Tensor edge_fm;    // [edge_channels+1,H,W], pre-head features
    int gec_applications = 0;
  };
  Output forward(const std::vector<Tensor>& semantic_taps, const std::vector<Tensor>& local_taps,
                 const Tensor& canny) const;

  // 1x1 projection of a tap pair to single-channel maps at full resolution.
  static std::pair<Tensor, Tensor> project_taps(const Conv2dLayer& tp, const Conv2dLayer& cp,
                                                const Tensor& t, const Tensor& c, int H, int W);

  int paired_levels() const { return n_levels_; }
  int retained_levels() const { return n_levels_ - n_excluded_; }
  int fm_channels() const { return stream_channels_ + 1; }
  const std::vector<GECUnit>& units() const { return units_; }

 private:
  ModelConfig cfg_;
  int n_levels_ = 0;
  int n_excluded_ = 0;
  int stream_channels_ = 0;
  std::vector<Conv2dLayer> proj_t_, proj_c_;
  Conv2dLayer init_conv_;  // folds the ungated shallow projections into the stream
  std::vector<GECUnit> units_;
  Conv2dLayer head_;
};

// Count of pyramid levels where the two encoders produce same-size taps,
// given the model configuration.
int paired_tap_levels(const ModelConfig& cfg);

}  // namespace fusionseg
