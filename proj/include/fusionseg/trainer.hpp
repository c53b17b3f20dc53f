#pragma once

#include <string>
#include <vector>

#include "fusionseg/checkpoint.hpp"
#include "fusionseg/dataset.hpp"
#include "fusionseg/losses.hpp"
#include "fusionseg/metrics.hpp"
#include "fusionseg/model/network.hpp"

namespace fusionseg {

// lr0 * (1 + cos(pi * step/total)) / 2, annealed to zero
double cosine_lr(int step, int total_steps, double lr0);

// Classic momentum with L2 decay folded into the gradient:
//   v <- m*v + g + wd*theta;  theta <- theta - lr*v
class SGDOptimizer {
 public:
  SGDOptimizer(ParamStore& params, double momentum, double weight_decay);
  void step(const std::vector<std::vector<double>>& grads, double lr,
            const std::vector<bool>* frozen = nullptr);

 private:
  ParamStore& params_;
  double momentum_, weight_decay_;
  std::vector<std::vector<double>> velocity_;
};

struct TrainOutput {
  std::vector<LossReport> epoch_log;
  std::string log_csv;
  int steps_run = 0;
};

// Optional teacher for distillation runs; kl_weight == 0 keeps the loss graph
// identical to plain training.
struct DistillSpec {
  const FusionNet* teacher = nullptr;
  double temperature = 2.0;
  double kl_weight = 0.5;
};

// Mini-batch SGD over the multi-task objective; deterministic for a fixed
// seed (data order, init, and update order are all seed-derived).
TrainOutput train_model(FusionNet& model, const TrainConfig& cfg, const Dataset& data,
                        const DistillSpec* distill = nullptr);

// Continue training from a checkpoint; the returned checkpoint carries the
// base's payload digest as provenance.
struct FinetuneOutput {
  TrainOutput train;
  Checkpoint checkpoint;
};
FinetuneOutput finetune(const Checkpoint& base, const TrainConfig& cfg, const Dataset& data);

extern const std::vector<std::string> kAblationVariants;

// Applies a named structural variant, trains under the identical seed and
// schedule, and evaluates on the held-out split.
MetricsReport run_ablation(const std::string& variant, const ModelConfig& model_cfg,
                           const TrainConfig& train_cfg, const Dataset& train_split,
                           const Dataset& test_split);

// Variant name -> model with the corresponding structure toggles.
ModelConfig apply_variant(const std::string& variant, ModelConfig cfg);

}  // namespace fusionseg
