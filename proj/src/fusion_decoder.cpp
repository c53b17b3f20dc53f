#include "fusionseg/model/fusion_decoder.hpp"

namespace fusionseg {

namespace op = ops;

FusionModule::FusionModule(ParamStore& ps, Rng& rng, const ModelConfig& cfg, int semantic_ch,
                           int local_ch, int edge_ch)
    : width_(cfg.fusion_width) {
  int cat_ch = semantic_ch + local_ch;
  branch_1x1_ = Conv2dLayer(ps, rng, "fusion.b1", cat_ch, width_, 1, 1, 0);
  branch_3x3_ = Conv2dLayer(ps, rng, "fusion.b3", cat_ch, width_, 3, 1, 1);
  branch_pool_ = Conv2dLayer(ps, rng, "fusion.bp", cat_ch + edge_ch, width_, 1, 1, 0);
}

Tensor FusionModule::operator()(const Tensor& semantic_fm, const Tensor& local_fm,
                                const Tensor& edge_fm) const {
  Tensor sem = semantic_fm, loc = local_fm;
  // align the two encoder maps by upsampling the smaller one
  if (loc.dim(1) < sem.dim(1) || loc.dim(2) < sem.dim(2))
    loc = op::upsample_bilinear(loc, sem.dim(1), sem.dim(2));
  else if (sem.dim(1) < loc.dim(1) || sem.dim(2) < loc.dim(2))
    sem = op::upsample_bilinear(sem, loc.dim(1), loc.dim(2));
  if (sem.dim(1) != loc.dim(1) || sem.dim(2) != loc.dim(2))
    throw ShapeError(cat("fusion: cannot align ", shape_str(semantic_fm.shape()), " with ",
                         shape_str(local_fm.shape())));
  Tensor x = op::concat_channels({sem, loc});
  int g = x.dim(1);

  Tensor a = branch_1x1_(x);
  Tensor b = branch_3x3_(x);

  Tensor pooled = op::avg_pool(x, 2);
  int pg = pooled.dim(1);
  if (edge_fm.dim(1) % pg != 0)
    throw ShapeError(cat("fusion: edge map ", edge_fm.dim(1), " not reducible to ", pg));
  Tensor edge_ds = edge_fm.dim(1) == pg ? edge_fm : op::avg_pool(edge_fm, edge_fm.dim(1) / pg);
  Tensor c = branch_pool_(op::concat_channels({pooled, edge_ds}));
  c = op::upsample_bilinear(c, g, x.dim(2));

  return op::concat_channels({a, b, c});
}

FusionDecoder::FusionDecoder(ParamStore& ps, Rng& rng, const ModelConfig& cfg, int fused_ch)
    : cfg_(cfg) {
  int stages = cfg.backbone_stages;  // one 2x upsample per backbone stride octave
  int in_ch = fused_ch;
  for (int s = 0; s < stages; ++s) {
    int target_stride = 1 << (stages - 1 - s);
    // semantic tap l has stride 2^(l+1); local tap j has stride 2^j
    int sem_l = -1, loc_j = -1;
    for (int l = 0; l < cfg.backbone_stages; ++l)
      if ((1 << (l + 1)) == target_stride) sem_l = l;
    for (int j = 0; j < cfg.local_stages; ++j)
      if ((1 << j) == target_stride) loc_j = j;
    sem_tap_index_.push_back(sem_l);
    loc_tap_index_.push_back(loc_j);

    int cat_ch = in_ch;
    if (sem_l >= 0) {
      sem_proj_.emplace_back(ps, rng, cat("decoder.", s, ".sem_proj"), cfg.backbone_base << sem_l,
                             cfg.skip_width, 1, 1, 0);
      cat_ch += cfg.skip_width;
    } else {
      sem_proj_.emplace_back();
    }
    if (loc_j >= 0) {
      int loc_ch = cfg.local_base << (loc_j + 1);
      loc_proj_.emplace_back(ps, rng, cat("decoder.", s, ".loc_proj"), loc_ch, cfg.skip_width, 1, 1, 0);
      cat_ch += cfg.skip_width;
    } else {
      loc_proj_.emplace_back();
    }

    int out_ch = cfg.decoder_base << (stages - 1 - s);
    stage_convs1_.emplace_back(ps, rng, cat("decoder.", s, ".conv1"), cat_ch, out_ch, 3, 1, 1);
    stage_norms1_.emplace_back(ps, cat("decoder.", s, ".norm1"), out_ch, norm_groups(out_ch));
    stage_convs2_.emplace_back(ps, rng, cat("decoder.", s, ".conv2"), out_ch, out_ch, 3, 1, 1);
    stage_norms2_.emplace_back(ps, cat("decoder.", s, ".norm2"), out_ch, norm_groups(out_ch));
    in_ch = out_ch;
  }
  classifier_ = Conv2dLayer(ps, rng, "decoder.classifier", in_ch, cfg.num_classes, 1, 1, 0);
}

Tensor FusionDecoder::decode(const Tensor& fused, const std::vector<Tensor>& semantic_skips,
                             const std::vector<Tensor>& local_skips, bool use_semantic,
                             bool use_local) const {
  Tensor x = fused;
  for (int s = 0; s < stages(); ++s) {
    x = op::upsample_bilinear(x, 2 * x.dim(1), 2 * x.dim(2));
    std::vector<Tensor> parts = {x};
    int sem_l = sem_tap_index_[static_cast<size_t>(s)];
    if (sem_l >= 0) {
      if (use_semantic) {
        if (sem_l >= static_cast<int>(semantic_skips.size()))
          throw ConfigError(cat("decode: semantic skip ", sem_l, " missing"));
        const Tensor& tap = semantic_skips[static_cast<size_t>(sem_l)];
        if (tap.dim(1) != x.dim(1) || tap.dim(2) != x.dim(2))
          throw ConfigError(cat("decode: semantic skip ", sem_l, " is ", shape_str(tap.shape()),
                                ", stage needs ", x.dim(1), "x", x.dim(2)));
        parts.push_back(sem_proj_[static_cast<size_t>(s)](tap));
      } else {
        parts.push_back(Tensor::zeros({cfg_.skip_width, x.dim(1), x.dim(2)}));
      }
    }
    int loc_j = loc_tap_index_[static_cast<size_t>(s)];
    if (loc_j >= 0) {
      if (use_local) {
        if (loc_j >= static_cast<int>(local_skips.size()))
          throw ConfigError(cat("decode: local skip ", loc_j, " missing"));
        const Tensor& tap = local_skips[static_cast<size_t>(loc_j)];
        if (tap.dim(1) != x.dim(1) || tap.dim(2) != x.dim(2))
          throw ConfigError(cat("decode: local skip ", loc_j, " is ", shape_str(tap.shape()),
                                ", stage needs ", x.dim(1), "x", x.dim(2)));
        parts.push_back(loc_proj_[static_cast<size_t>(s)](tap));
      } else {
        parts.push_back(Tensor::zeros({cfg_.skip_width, x.dim(1), x.dim(2)}));
      }
    }
    x = parts.size() > 1 ? op::concat_channels(parts) : x;
    x = op::silu(stage_norms1_[static_cast<size_t>(s)](stage_convs1_[static_cast<size_t>(s)](x)));
    x = op::silu(stage_norms2_[static_cast<size_t>(s)](stage_convs2_[static_cast<size_t>(s)](x)));
  }
  return classifier_(x);
}

Tensor predict_probabilities(const Tensor& logits) {
  if (logits.ndim() != 3) throw ShapeError("predict_probabilities: expected [K,H,W] logits");
  for (double v : logits.values())
    if (!std::isfinite(v)) throw ValidationError("predict_probabilities: non-finite logits");
  return op::softmax_channels(logits);
}

}  // namespace fusionseg
