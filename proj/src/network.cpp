#include "fusionseg/model/network.hpp"

#include "fusionseg/canny.hpp"

namespace fusionseg {

namespace op = ops;

FusionNet::FusionNet(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
  cfg_.validate();
  Rng rng = Rng::stream(init_seed, "init");
  semantic_ = std::make_unique<SemanticEncoder>(params_, rng, cfg_);
  local_ = std::make_unique<LocalEncoder>(params_, rng, cfg_);
  edge_ = std::make_unique<EdgeModule>(params_, rng, cfg_);
  fusion_ = std::make_unique<FusionModule>(params_, rng, cfg_, semantic_->out_channels(),
                                           local_->out_channels(), edge_->fm_channels());
  decoder_ = std::make_unique<FusionDecoder>(params_, rng, cfg_, fusion_->out_channels());
}

FusionNet::Output FusionNet::forward(const Tensor& image, const Tensor& canny, Rng* drop_rng) const {
  SemanticEncoder::Output sem = semantic_->forward(image, drop_rng);
  LocalEncoder::Output loc = local_->forward(image);

  Output out;
  Tensor edge_fm;
  if (cfg_.use_edge_module) {
    EdgeModule::Output e = edge_->forward(sem.skips, loc.skips, canny);
    out.edge_pred = e.edge_pred;
    edge_fm = e.edge_fm;
  } else {
    edge_fm = Tensor::zeros({edge_->fm_channels(), image.dim(1), image.dim(2)});
  }

  Tensor fused = (*fusion_)(sem.semantic_fm, loc.local_fm, edge_fm);
  out.logits = decoder_->decode(fused, sem.skips, loc.skips, cfg_.use_semantic_skips,
                                cfg_.use_local_skips);
  return out;
}

Tensor FusionNet::image_tensor(const std::vector<double>& image, int h, int w) {
  return Tensor::from({1, h, w}, image);
}

Tensor FusionNet::forward_logits(const std::vector<double>& image, int h, int w) const {
  NoGradGuard ng;
  EdgeMap canny = canny_edges_default(image, h, w);
  Tensor canny_t = Tensor::from({1, h, w}, canny.values);
  return forward(image_tensor(image, h, w), canny_t).logits;
}

LabelMap FusionNet::segment_slice(const std::vector<double>& image, int h, int w) const {
  Tensor logits = forward_logits(image, h, w);
  int K = logits.dim(0);
  size_t plane = static_cast<size_t>(h) * w;
  LabelMap out;
  out.n = 1;
  out.h = h;
  out.w = w;
  out.num_classes = K;
  out.labels.assign(plane, 0);
  for (size_t p = 0; p < plane; ++p) {
    int best = 0;
    double bv = logits.values()[p];
    for (int k = 1; k < K; ++k) {
      double v = logits.values()[static_cast<size_t>(k) * plane + p];
      if (v > bv) {
        bv = v;
        best = k;
      }
    }
    out.labels[p] = static_cast<uint8_t>(best);
  }
  return out;
}

}  // namespace fusionseg
