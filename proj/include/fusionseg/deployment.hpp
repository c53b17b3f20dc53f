#pragma once

#include <map>
#include <string>
#include <vector>

#include "fusionseg/checkpoint.hpp"
#include "fusionseg/dataset.hpp"
#include "fusionseg/metrics.hpp"
#include "fusionseg/trainer.hpp"

namespace fusionseg {

// Symmetric per-channel int8 weight quantization of conv/linear kernels;
// everything else (biases, norms, positions) stays full precision.
struct QuantizedTensor {
  std::string name;
  Shape shape;
  bool quantized = false;
  std::vector<int8_t> q;        // when quantized
  std::vector<double> scales;   // one per output channel
  std::vector<float> raw;       // when kept at full precision
};

struct ActivationRange {
  double lo = 0.0, hi = 0.0;
};

struct QuantizedModel {
  ModelConfig model_config;
  std::vector<QuantizedTensor> tensors;
  std::map<std::string, ActivationRange> activation_ranges;
  std::string source_digest;

  int64_t quantized_elements() const;
};

// Per-output-channel symmetric quantization of one kernel; exposed for the
// rounding-oracle checks.
void quantize_channel(const double* w, size_t count, int8_t* q, double& scale);

QuantizedModel quantize_checkpoint(const Checkpoint& ckpt, const Dataset& calibration);

// Fake-quant model: int8 weights dequantized back to floating point.
Checkpoint dequantize(const QuantizedModel& qm);

void save_quantized(const std::string& path, const QuantizedModel& qm);
QuantizedModel load_quantized(const std::string& path);

struct DistillResult {
  Checkpoint checkpoint;
  TrainOutput train;
  bool size_warning = false;  // student not strictly smaller than the teacher
};

// Teacher-student logit distillation: convex mix of the hard multi-task loss
// and the temperature-softened per-pixel KL to the teacher. kl_weight == 0
// follows the exact ordinary training path.
DistillResult distill(const Checkpoint& teacher, const ModelConfig& student_cfg,
                      const TrainConfig& train_cfg, const Dataset& data,
                      double temperature = 2.0, double kl_weight = 0.5);

struct ComparisonReport {
  MetricsReport report_a, report_b;
  // per-metric deltas on the mean row, b - a
  std::map<std::string, double> deltas;
  double ms_per_slice_a = 0.0, ms_per_slice_b = 0.0;

  std::string to_csv() const;
  std::string to_table() const;
};

ComparisonReport compare_models(const FusionNet& a, const FusionNet& b, const Dataset& ds,
                                const std::string& tag_a = "a", const std::string& tag_b = "b");

}  // namespace fusionseg
