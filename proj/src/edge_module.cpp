#include "fusionseg/model/edge_module.hpp"

#include <algorithm>

namespace fusionseg {

namespace op = ops;

int paired_tap_levels(const ModelConfig& cfg) {
  // Semantic tap l sits at stride 2^(l+1); the equal-stride local tap is
  // index l+1, which exists while l+1 <= local_stages-1.
  return std::min(cfg.backbone_stages, cfg.local_stages - 1);
}

GECUnit::GECUnit(ParamStore& ps, Rng& rng, const std::string& name, int stream_channels,
                 int se_reduction) {
  int cat_ch = stream_channels + 2;
  se = SEBlock(ps, rng, name + ".se", cat_ch, se_reduction);
  alpha_conv = Conv2dLayer(ps, rng, name + ".alpha", cat_ch, 1, 1, 1, 0);
  gate_conv = Conv2dLayer(ps, rng, name + ".gate", stream_channels, stream_channels, 1, 1, 0);
}

Tensor GECUnit::attention(const Tensor& t_proj, const Tensor& c_proj, const Tensor& stream) const {
  if (t_proj.dim(1) != stream.dim(1) || t_proj.dim(2) != stream.dim(2) ||
      c_proj.dim(1) != stream.dim(1) || c_proj.dim(2) != stream.dim(2))
    throw ShapeError("gec attention: inputs must share HxW");
  Tensor cat = op::concat_channels({t_proj, c_proj, stream});
  Tensor alpha = op::sigmoid(alpha_conv(se(cat)));
  return op::clamp(alpha, 1e-12, 1.0 - 1e-12);
}

Tensor GECUnit::apply(const Tensor& stream, const Tensor& alpha) const {
  return gate_conv(op::add(op::mul_spatial(stream, alpha), stream));
}

std::pair<Tensor, Tensor> EdgeModule::project_taps(const Conv2dLayer& tp, const Conv2dLayer& cp,
                                                   const Tensor& t, const Tensor& c, int H, int W) {
  if (t.dim(1) != c.dim(1) || t.dim(2) != c.dim(2))
    throw ShapeError(cat("project_taps: mismatched pyramid levels ", shape_str(t.shape()), " vs ",
                         shape_str(c.shape())));
  Tensor tp1 = op::upsample_bilinear(tp(t), H, W);
  Tensor cp1 = op::upsample_bilinear(cp(c), H, W);
  return {tp1, cp1};
}

EdgeModule::EdgeModule(ParamStore& ps, Rng& rng, const ModelConfig& cfg) : cfg_(cfg) {
  n_levels_ = paired_tap_levels(cfg);
  if (n_levels_ < 2)
    throw ConfigError(cat("edge module: needs at least 2 usable tap levels, got ", n_levels_));
  n_excluded_ = std::min(cfg.edge_shallow_excluded, n_levels_ - 1);
  stream_channels_ = cfg.edge_channels;

  for (int l = 0; l < n_levels_; ++l) {
    int sem_ch = cfg.backbone_base << l;
    int loc_ch = cfg.local_base << (l + 2);  // local tap l+1
    proj_t_.emplace_back(ps, rng, cat("edge.proj_t.", l), sem_ch, 1, 1, 1, 0);
    proj_c_.emplace_back(ps, rng, cat("edge.proj_c.", l), loc_ch, 1, 1, 1, 0);
  }
  init_conv_ = Conv2dLayer(ps, rng, "edge.init", std::max(1, 2 * n_excluded_), stream_channels_,
                           1, 1, 0);
  for (int l = n_excluded_; l < n_levels_; ++l)
    units_.emplace_back(ps, rng, cat("edge.gec.", l), stream_channels_, cfg.se_reduction);
  head_ = Conv2dLayer(ps, rng, "edge.head", stream_channels_ + 1, 1, 1, 1, 0);
}

EdgeModule::Output EdgeModule::forward(const std::vector<Tensor>& semantic_taps,
                                       const std::vector<Tensor>& local_taps,
                                       const Tensor& canny) const {
  if (static_cast<int>(semantic_taps.size()) < n_levels_ ||
      static_cast<int>(local_taps.size()) < n_levels_ + 1)
    throw ConfigError(cat("edge module: expected ", n_levels_, " semantic and ", n_levels_ + 1,
                          " local taps"));
  int H = canny.dim(1), W = canny.dim(2);

  // full-resolution single-channel projections per paired level
  std::vector<Tensor> tps, cps;
  for (int l = 0; l < n_levels_; ++l) {
    auto [tp, cp] = project_taps(proj_t_[static_cast<size_t>(l)], proj_c_[static_cast<size_t>(l)],
                                 semantic_taps[static_cast<size_t>(l)],
                                 local_taps[static_cast<size_t>(l + 1)], H, W);
    tps.push_back(tp);
    cps.push_back(cp);
  }

  Tensor stream;
  if (n_excluded_ > 0) {
    std::vector<Tensor> shallow;
    for (int l = 0; l < n_excluded_; ++l) {
      shallow.push_back(tps[static_cast<size_t>(l)]);
      shallow.push_back(cps[static_cast<size_t>(l)]);
    }
    stream = init_conv_(op::concat_channels(shallow));
  } else {
    stream = init_conv_(Tensor::zeros({1, H, W}));
  }

  Output out;
  for (int l = n_excluded_; l < n_levels_; ++l) {
    const GECUnit& u = units_[static_cast<size_t>(l - n_excluded_)];
    Tensor alpha = u.attention(tps[static_cast<size_t>(l)], cps[static_cast<size_t>(l)], stream);
    stream = u.apply(stream, alpha);
    ++out.gec_applications;
  }

  out.edge_fm = op::concat_channels({stream, canny});
  out.edge_pred = op::sigmoid(head_(out.edge_fm));
  return out;
}

}  // namespace fusionseg
