#include "fusionseg/model/local_encoder.hpp"

namespace fusionseg {

namespace op = ops;

Tensor se_squeeze(const Tensor& fm) { return op::global_avg_channels(fm); }

Tensor se_scale(const Tensor& fm, const Tensor& weights) {
  if (fm.ndim() != 3 || weights.ndim() != 1 || weights.dim(0) != fm.dim(0))
    throw ShapeError(cat("se_scale: weights ", shape_str(weights.shape()), " for map ",
                         shape_str(fm.shape())));
  for (double v : weights.values())
    if (!(v > 0.0 && v < 1.0))
      throw ValidationError(cat("se_scale: channel weight ", v, " outside the open interval (0,1)"));
  return op::scale_channels(fm, weights);
}

SEBlock::SEBlock(ParamStore& ps, Rng& rng, const std::string& name, int channels, int reduction) {
  int mid = std::max(1, channels / reduction);
  fc1 = LinearLayer(ps, rng, name + ".fc1", channels, mid, Init::kConvFanIn);
  fc2 = LinearLayer(ps, rng, name + ".fc2", mid, channels, Init::kConvFanIn);
}

Tensor SEBlock::excite(const Tensor& channel_means) const {
  if (channel_means.ndim() != 1 || channel_means.dim(0) != fc1.w.dim(0))
    throw ShapeError(cat("excite: ", shape_str(channel_means.shape()), " means for ",
                         fc1.w.dim(0), " channels"));
  Tensor row = op::reshape(channel_means, {1, channel_means.dim(0)});
  Tensor s = op::sigmoid(fc2(op::relu(fc1(row))));
  // sigmoid rounds to exactly 0/1 for |x| > ~37; keep weights strictly open
  s = op::clamp(s, 1e-12, 1.0 - 1e-12);
  return op::reshape(s, {channel_means.dim(0)});
}

SEBottleNet::SEBottleNet(ParamStore& ps, Rng& rng, const std::string& name,
                         const SEBottleNetConfig& c, bool bypass)
    : cfg(c), bypass_se(bypass) {
  cfg.validate();
  reduce = Conv2dLayer(ps, rng, name + ".reduce", cfg.in_channels, cfg.bottleneck_channels, 1, 1, 0);
  n1 = GroupNormLayer(ps, name + ".n1", cfg.bottleneck_channels, norm_groups(cfg.bottleneck_channels));
  conv3 = Conv2dLayer(ps, rng, name + ".conv3", cfg.bottleneck_channels, cfg.bottleneck_channels, 3, 1, 1);
  n2 = GroupNormLayer(ps, name + ".n2", cfg.bottleneck_channels, norm_groups(cfg.bottleneck_channels));
  expand = Conv2dLayer(ps, rng, name + ".expand", cfg.bottleneck_channels, cfg.out_channels, 1, 1, 0);
  n3 = GroupNormLayer(ps, name + ".n3", cfg.out_channels, norm_groups(cfg.out_channels));
  se = SEBlock(ps, rng, name + ".se", cfg.out_channels, cfg.se_reduction);
  if (cfg.in_channels != cfg.out_channels)
    shortcut = Conv2dLayer(ps, rng, name + ".proj", cfg.in_channels, cfg.out_channels, 1, 1, 0);
}

Tensor SEBottleNet::operator()(const Tensor& x) const {
  if (x.ndim() != 3 || x.dim(0) != cfg.in_channels)
    throw ShapeError(cat("SEBottleNet: input ", shape_str(x.shape()), " expects ", cfg.in_channels,
                         " channels"));
  Tensor f = op::silu(n1(reduce(x)));
  f = op::silu(n2(conv3(f)));
  f = n3(expand(f));
  if (!bypass_se) f = se(f);
  Tensor idn = shortcut.w.defined() ? shortcut(x) : x;
  return op::add(idn, f);
}

LocalEncoder::LocalEncoder(ParamStore& ps, Rng& rng, const ModelConfig& cfg) : cfg_(cfg) {
  stem_ = Conv2dLayer(ps, rng, "local.stem.conv", cfg.in_channels, cfg.local_base, 3, 1, 1);
  stem_norm_ = GroupNormLayer(ps, "local.stem.norm", cfg.local_base, norm_groups(cfg.local_base));
  int in_ch = cfg.local_base;
  for (int s = 0; s < cfg.local_stages; ++s) {
    SEBottleNetConfig bc;
    bc.in_channels = in_ch;
    bc.out_channels = cfg.local_base << (s + 1);
    bc.bottleneck_channels = std::max(2, bc.out_channels / 4);
    bc.se_reduction = cfg.se_reduction;
    blocks_.emplace_back(ps, rng, cat("local.stage.", s), bc, cfg.se_bypass);
    in_ch = bc.out_channels;
  }
  out_channels_ = in_ch;
}

LocalEncoder::Output LocalEncoder::forward(const Tensor& image) const {
  if (image.ndim() != 3 || image.dim(0) != cfg_.in_channels)
    throw ShapeError(cat("local encoder: input ", shape_str(image.shape()), " expects ",
                         cfg_.in_channels, " channels"));
  int min_size = 1 << cfg_.local_stages;
  if (image.dim(1) < min_size || image.dim(2) < min_size)
    throw ShapeError(cat("local encoder: input ", image.dim(1), "x", image.dim(2),
                         " too small for ", cfg_.local_stages,
                         " pooling stages; minimum size is ", min_size, "x", min_size));
  Output out;
  Tensor x = op::silu(stem_norm_(stem_(image)));
  for (const auto& blk : blocks_) {
    x = blk(x);
    out.skips.push_back(x);
    x = op::max_pool2x2(x);
  }
  out.local_fm = x;
  return out;
}

}  // namespace fusionseg
