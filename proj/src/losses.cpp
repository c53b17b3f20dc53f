#include "fusionseg/losses.hpp"

namespace fusionseg {

namespace op = ops;

namespace {

std::vector<int> label_ints(const LabelMap& y) {
  if (y.n != 1) throw ValidationError("losses: expected a single-slice LabelMap");
  return std::vector<int>(y.labels.begin(), y.labels.end());
}

}  // namespace

Tensor dice_loss(const Tensor& probs, const LabelMap& y, double eps) {
  if (probs.ndim() != 3) throw ShapeError("dice_loss: expected [K,H,W] probabilities");
  int K = probs.dim(0), H = probs.dim(1), W = probs.dim(2);
  if (y.n != 1 || y.h != H || y.w != W)
    throw ShapeError(cat("dice_loss: labels ", y.h, "x", y.w, " vs probs ", H, "x", W));
  if (K < 2) throw ConfigError("dice_loss: needs at least 2 classes");
  size_t plane = static_cast<size_t>(H) * W;

  Tensor acc;
  for (int c = 1; c < K; ++c) {
    std::vector<double> onehot(plane);
    double gsum = 0.0;
    for (size_t p = 0; p < plane; ++p) {
      onehot[p] = (y.labels[p] == c) ? 1.0 : 0.0;
      gsum += onehot[p];
    }
    Tensor g = Tensor::from({1, H, W}, std::move(onehot));
    Tensor pc = op::slice_channels(probs, c, c + 1);
    Tensor inter = op::sum(op::mul(pc, g));
    Tensor num = op::add_scalar(op::mul_scalar(inter, 2.0), eps);
    Tensor den = op::add_scalar(op::sum(pc), gsum + eps);
    Tensor dice = op::div(num, den);
    acc = acc.defined() ? op::add(acc, dice) : dice;
  }
  return op::add_scalar(op::mul_scalar(acc, -1.0 / (K - 1)), 1.0);
}

Tensor cross_entropy_loss(const Tensor& logits, const LabelMap& y) {
  if (logits.ndim() != 3) throw ShapeError("cross_entropy_loss: expected [K,H,W] logits");
  if (y.h != logits.dim(1) || y.w != logits.dim(2))
    throw ShapeError("cross_entropy_loss: label shape mismatch");
  return op::cross_entropy_channels(logits, label_ints(y));
}

Tensor edge_bce_loss(const Tensor& edge_pred, const EdgeMap& edge_label, double lambda3) {
  if (edge_pred.ndim() != 3 || edge_pred.dim(0) != 1)
    throw ShapeError("edge_bce_loss: expected [1,H,W] predictions");
  if (edge_label.h != edge_pred.dim(1) || edge_label.w != edge_pred.dim(2))
    throw ShapeError("edge_bce_loss: label shape mismatch");
  Tensor bce = op::bce_mean(edge_pred, edge_label.values, 1e-7);
  return lambda3 == 1.0 ? bce : op::mul_scalar(bce, lambda3);
}

Tensor foreground_sum(const Tensor& logits) {
  if (logits.ndim() != 3) throw ShapeError("foreground_sum: expected [K,H,W] logits");
  if (logits.dim(0) < 2)
    throw ConfigError(cat("foreground_sum: needs K >= 2 with class 0 background, got K=",
                          logits.dim(0)));
  return op::sum_channel_range(logits, 1, logits.dim(0));
}

Tensor shape_regularization(const Tensor& logits, const Tensor& edge_pred, double lambda4,
                            bool l2) {
  if (lambda4 == 0.0) return Tensor::zeros({1});
  if (edge_pred.ndim() != 3 || edge_pred.dim(0) != 1)
    throw ShapeError("shape_regularization: expected [1,H,W] edge predictions");
  if (edge_pred.dim(1) != logits.dim(1) || edge_pred.dim(2) != logits.dim(2))
    throw ShapeError("shape_regularization: shape mismatch");
  Tensor gate = op::sigmoid(foreground_sum(logits));
  Tensor resid = op::sub(op::mul(gate, edge_pred), edge_pred);
  Tensor penalty = l2 ? op::mean(op::mul(resid, resid)) : op::mean(op::abs(resid));
  return op::mul_scalar(penalty, lambda4);
}

double lambda_schedule(int epoch, const LossWeights& weights) {
  if (epoch < 0) throw ValidationError("lambda_schedule: epoch must be >= 0");
  return epoch < weights.l4_activation_epoch ? 0.0 : weights.l4;
}

LossReport TotalLoss::report(int epoch, double lambda4_eff, double lr) const {
  LossReport r;
  r.seg = seg.item();
  r.edge = edge.item();
  r.sreg = sreg.item();
  r.total = total.item();
  r.epoch = epoch;
  r.lambda4_eff = lambda4_eff;
  r.lr = lr;
  return r;
}

TotalLoss total_loss(const Tensor& logits, const Tensor& edge_pred, const LabelMap& y,
                     const EdgeMap& edge_label, const LossWeights& weights, double lambda4_eff,
                     bool sreg_l2) {
  TotalLoss out;
  Tensor probs = op::softmax_channels(logits);
  Tensor dice = dice_loss(probs, y);
  Tensor ce = cross_entropy_loss(logits, y);
  out.seg = op::add(op::mul_scalar(dice, weights.l1), op::mul_scalar(ce, weights.l2));
  if (edge_pred.defined()) {
    out.edge = edge_bce_loss(edge_pred, edge_label, weights.l3);
    out.sreg = shape_regularization(logits, edge_pred, lambda4_eff, sreg_l2);
  } else {
    out.edge = Tensor::zeros({1});
    out.sreg = Tensor::zeros({1});
  }
  out.total = op::add(op::add(out.seg, out.edge), out.sreg);
  return out;
}

}  // namespace fusionseg
