#include "fusionseg/trainer.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace fusionseg {

namespace op = ops;

double cosine_lr(int step, int total_steps, double lr0) {
  if (total_steps < 1) throw ValidationError("cosine_lr: total_steps must be >= 1");
  if (step < 0 || step > total_steps)
    throw ValidationError(cat("cosine_lr: step ", step, " outside [0,", total_steps, "]"));
  return lr0 * (1.0 + std::cos(3.14159265358979323846 * step / total_steps)) / 2.0;
}

SGDOptimizer::SGDOptimizer(ParamStore& params, double momentum, double weight_decay)
    : params_(params), momentum_(momentum), weight_decay_(weight_decay) {
  for (const Tensor& p : params.all()) velocity_.emplace_back(p.values().size(), 0.0);
}

void SGDOptimizer::step(const std::vector<std::vector<double>>& grads, double lr,
                        const std::vector<bool>* frozen) {
  if (grads.size() != velocity_.size())
    throw ValidationError("SGD: gradient list does not match parameter list");
  for (size_t i = 0; i < grads.size(); ++i) {
    if (frozen && (*frozen)[i]) continue;
    Tensor p = params_.all()[i];
    auto& v = velocity_[i];
    auto& th = p.values();
    const auto& g = grads[i];
    for (size_t j = 0; j < v.size(); ++j) {
      v[j] = momentum_ * v[j] + g[j] + weight_decay_ * th[j];
      th[j] -= lr * v[j];
    }
  }
}

namespace {

Sample flipped_sample(const Sample& s) {
  Sample f = s;
  for (int y = 0; y < s.h; ++y)
    for (int x = 0; x < s.w / 2; ++x) {
      size_t a = static_cast<size_t>(y) * s.w + x;
      size_t b = static_cast<size_t>(y) * s.w + (s.w - 1 - x);
      std::swap(f.image[a], f.image[b]);
      std::swap(f.labels.labels[a], f.labels.labels[b]);
      std::swap(f.canny.values[a], f.canny.values[b]);
      std::swap(f.edge_label.values[a], f.edge_label.values[b]);
    }
  return f;
}

struct BatchLoss {
  Tensor total;
  double seg = 0, edge = 0, sreg = 0;
};

BatchLoss batch_loss(const FusionNet& model, const Dataset& data, const std::vector<size_t>& idx,
                     size_t b0, size_t b1, const LossWeights& weights, double lambda4_eff,
                     bool sreg_l2, bool flip, Rng* flip_rng, const DistillSpec* distill) {
  BatchLoss out;
  Tensor acc;
  bool soft = distill && distill->teacher && distill->kl_weight > 0.0;
  for (size_t k = b0; k < b1; ++k) {
    const Sample& raw = data.samples[idx[k]];
    bool do_flip = flip && flip_rng && flip_rng->uniform() < 0.5;
    Sample s = do_flip ? flipped_sample(raw) : raw;
    Tensor img = Tensor::from({1, s.h, s.w}, s.image);
    Tensor canny = Tensor::from({1, s.h, s.w}, s.canny.values);
    auto fwd = model.forward(img, canny);
    TotalLoss tl = total_loss(fwd.logits, fwd.edge_pred, s.labels, s.edge_label, weights,
                              lambda4_eff, sreg_l2);
    Tensor sample_total = tl.total;
    if (soft) {
      std::vector<double> teacher_probs;
      {
        NoGradGuard ng;
        auto tout = distill->teacher->forward(img, canny);
        Tensor soft_logits = op::mul_scalar(tout.logits, 1.0 / distill->temperature);
        teacher_probs = op::softmax_channels(soft_logits).values();
      }
      Tensor kl = op::kl_channels(fwd.logits, teacher_probs, distill->temperature);
      double t2 = distill->temperature * distill->temperature;
      sample_total = op::add(op::mul_scalar(sample_total, 1.0 - distill->kl_weight),
                             op::mul_scalar(kl, distill->kl_weight * t2));
    }
    out.seg += tl.seg.item();
    out.edge += tl.edge.item();
    out.sreg += tl.sreg.item();
    acc = acc.defined() ? op::add(acc, sample_total) : sample_total;
  }
  double inv = 1.0 / static_cast<double>(b1 - b0);
  out.total = op::mul_scalar(acc, inv);
  out.seg *= inv;
  out.edge *= inv;
  out.sreg *= inv;
  return out;
}

std::string log_header() { return "epoch,seg,edge,sreg,total,lr,lambda4\n"; }

std::string log_line(const LossReport& r) {
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%d,%.8f,%.8f,%.8f,%.8f,%.8f,%.8f\n", r.epoch, r.seg, r.edge,
                r.sreg, r.total, r.lr, r.lambda4_eff);
  return buf;
}

}  // namespace

TrainOutput train_model(FusionNet& model, const TrainConfig& cfg, const Dataset& data,
                        const DistillSpec* distill) {
  cfg.validate();
  if (data.samples.empty()) throw ValidationError("train: empty dataset");

  TrainOutput out;
  out.log_csv = log_header();
  if (cfg.epochs == 0) return out;

  size_t n = data.samples.size();
  size_t bs = static_cast<size_t>(cfg.batch_size);
  int batches_per_epoch = static_cast<int>((n + bs - 1) / bs);
  int total_steps = cfg.epochs * batches_per_epoch;
  if (cfg.max_steps > 0) total_steps = std::min(total_steps, cfg.max_steps);

  SGDOptimizer opt(model.params(), cfg.momentum, cfg.weight_decay);
  std::vector<bool> frozen(model.params().all().size(), false);
  if (cfg.freeze_encoders) {
    for (size_t i = 0; i < model.params().all().size(); ++i) {
      const std::string& name = model.params().all()[i].name();
      frozen[i] = name.rfind("semantic.", 0) == 0 || name.rfind("local.", 0) == 0;
    }
  }

  LossWeights sched = cfg.weights;
  sched.l4_activation_epoch = cfg.effective_activation_epoch();

  Rng shuffle_rng = Rng::stream(cfg.seed, "shuffle");
  Rng flip_rng = Rng::stream(cfg.seed, "flip");
  std::vector<size_t> idx(n);
  for (size_t i = 0; i < n; ++i) idx[i] = i;

  int step = 0;
  bool done = false;
  for (int epoch = 0; epoch < cfg.epochs && !done; ++epoch) {
    double lambda4_eff = lambda_schedule(epoch, sched);
    shuffle_rng.shuffle(idx);
    double eseg = 0, eedge = 0, esreg = 0, etotal = 0, elr = 0;
    int ebatches = 0;
    for (size_t b0 = 0; b0 < n && !done; b0 += bs) {
      size_t b1 = std::min(n, b0 + bs);
      double lr = cosine_lr(step, total_steps, cfg.lr0);
      BatchLoss bl = batch_loss(model, data, idx, b0, b1, cfg.weights, lambda4_eff, cfg.sreg_l2,
                                cfg.flip_augment, &flip_rng, distill);
      double total = bl.total.item();
      if (!std::isfinite(total))
        throw std::runtime_error(cat("training diverged: non-finite loss at epoch ", epoch,
                                     ", batch ", static_cast<int>(b0 / bs)));
      Gradients gs = backward(bl.total);
      std::vector<std::vector<double>> grads;
      grads.reserve(model.params().all().size());
      for (const Tensor& p : model.params().all()) {
        const std::vector<double>* g = gs.find(p.raw());
        grads.push_back(g ? *g : std::vector<double>(p.values().size(), 0.0));
      }
      opt.step(grads, lr, &frozen);

      eseg += bl.seg;
      eedge += bl.edge;
      esreg += bl.sreg;
      etotal += total;
      elr += lr;
      ++ebatches;
      ++step;
      if (cfg.max_steps > 0 && step >= cfg.max_steps) done = true;
    }
    LossReport rep;
    rep.epoch = epoch;
    rep.seg = eseg / ebatches;
    rep.edge = eedge / ebatches;
    rep.sreg = esreg / ebatches;
    rep.total = etotal / ebatches;
    rep.lr = elr / ebatches;
    rep.lambda4_eff = lambda4_eff;
    out.epoch_log.push_back(rep);
    out.log_csv += log_line(rep);
  }
  out.steps_run = step;
  return out;
}

FinetuneOutput finetune(const Checkpoint& base, const TrainConfig& cfg, const Dataset& data) {
  FusionNet model = model_from_checkpoint(base);
  FinetuneOutput out;
  out.train = train_model(model, cfg, data);
  out.checkpoint = snapshot_model(model, to_json(cfg), base.epoch + cfg.epochs);
  out.checkpoint.base_digest = base.payload_digest;
  out.checkpoint.log_digest = digest_hex(
      fnv1a64(out.train.log_csv.data(), out.train.log_csv.size()));
  return out;
}

const std::vector<std::string> kAblationVariants = {
    "full", "no_semantic_skips", "no_local_skips", "no_all_skips", "no_edge_module"};

ModelConfig apply_variant(const std::string& variant, ModelConfig cfg) {
  if (variant == "full") return cfg;
  if (variant == "no_semantic_skips") {
    cfg.use_semantic_skips = false;
    return cfg;
  }
  if (variant == "no_local_skips") {
    cfg.use_local_skips = false;
    return cfg;
  }
  if (variant == "no_all_skips") {
    cfg.use_semantic_skips = false;
    cfg.use_local_skips = false;
    return cfg;
  }
  if (variant == "no_edge_module") {
    cfg.use_edge_module = false;
    return cfg;
  }
  throw ValidationError(cat("unknown ablation variant: ", variant, " (supported:",
                            [] {
                              std::string s;
                              for (const auto& v : kAblationVariants) s += " " + v;
                              return s;
                            }(),
                            ")"));
}

MetricsReport run_ablation(const std::string& variant, const ModelConfig& model_cfg,
                           const TrainConfig& train_cfg, const Dataset& train_split,
                           const Dataset& test_split) {
  ModelConfig cfg = apply_variant(variant, model_cfg);
  TrainConfig tc = train_cfg;
  if (variant == "no_edge_module") tc.disable_edge_module = true;
  FusionNet model(cfg, tc.seed);
  train_model(model, tc, train_split);
  MetricsReport rep = evaluate(model, test_split, variant);
  return rep;
}

}  // namespace fusionseg
