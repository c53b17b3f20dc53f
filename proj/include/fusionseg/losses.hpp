#pragma once

#include "fusionseg/config.hpp"
#include "fusionseg/image.hpp"
#include "fusionseg/ops.hpp"

namespace fusionseg {

// Multi-task objective: segmentation (dice + cross entropy), edge (bce),
// shape regularization, with the dynamic lambda4 schedule.

// 1 - mean over foreground classes of (2*sum(p*g)+eps)/(sum(p)+sum(g)+eps).
Tensor dice_loss(const Tensor& probs, const LabelMap& y, double eps = 1.0);

// mean per-pixel negative log softmax probability of the true class
Tensor cross_entropy_loss(const Tensor& logits, const LabelMap& y);

// lambda3-weighted mean binary cross entropy; predictions clamped at 1e-7
Tensor edge_bce_loss(const Tensor& edge_pred, const EdgeMap& edge_label, double lambda3 = 1.0);

// sum of the non-background logit channels (the pixel-wise "+" over classes
// 1..K-1); configuration error when K < 2
Tensor foreground_sum(const Tensor& logits);

// lambda4 * mean |sigmoid(foreground_sum) * e - e| (L1 by default; squared
// residual behind l2=true)
Tensor shape_regularization(const Tensor& logits, const Tensor& edge_pred, double lambda4,
                            bool l2 = false);

// 0 before the activation epoch, the configured value from it onward
double lambda_schedule(int epoch, const LossWeights& weights);

struct LossReport {
  double seg = 0.0;
  double edge = 0.0;
  double sreg = 0.0;
  double total = 0.0;
  int epoch = 0;
  double lambda4_eff = 0.0;
  double lr = 0.0;
};

struct TotalLoss {
  Tensor seg, edge, sreg, total;
  LossReport report(int epoch, double lambda4_eff, double lr) const;
};

// Assembles the full objective for one sample. `edge_pred` may be undefined
// (edge module ablated); the edge and shape terms are then zero.
TotalLoss total_loss(const Tensor& logits, const Tensor& edge_pred, const LabelMap& y,
                     const EdgeMap& edge_label, const LossWeights& weights, double lambda4_eff,
                     bool sreg_l2 = false);

}  // namespace fusionseg
