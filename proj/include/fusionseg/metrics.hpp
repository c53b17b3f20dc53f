#pragma once

#include <string>
#include <vector>

#include "fusionseg/dataset.hpp"
#include "fusionseg/image.hpp"

namespace fusionseg {

class FusionNet;

// Integer pixel counts for one class over any number of slices; every metric
// below is a pure function of these.
struct MaskCounts {
  int64_t inter = 0;  // |pred ∩ real|
  int64_t pred = 0;   // |pred|
  int64_t real = 0;   // |real|
  int64_t total = 0;  // |I|

  int64_t unite() const { return pred + real - inter; }
  MaskCounts& operator+=(const MaskCounts& o) {
    inter += o.inter;
    pred += o.pred;
    real += o.real;
    total += o.total;
    return *this;
  }
};

MaskCounts count_masks(const LabelMap& pred, const LabelMap& real, int class_id);

double iou_from(const MaskCounts& c);        // empty union -> 1
double dsc_from(const MaskCounts& c);        // both empty -> 1
double voe_from(const MaskCounts& c);        // signed 2(|pred|-|real|)/(|pred|+|real|); both empty -> 0
// |I - (pred ∪ real)| / |I - real|; real covering I -> 1 with warning flag
double precision_paper_from(const MaskCounts& c, bool* warned = nullptr);
double recall_from(const MaskCounts& c);     // empty real -> 1
double precision_std_from(const MaskCounts& c);  // TP/(TP+FP); empty pred -> 1

double iou(const LabelMap& pred, const LabelMap& real, int class_id);
double dsc(const LabelMap& pred, const LabelMap& real, int class_id);
double voe(const LabelMap& pred, const LabelMap& real, int class_id);
double precision_paper(const LabelMap& pred, const LabelMap& real, int class_id,
                       bool* warned = nullptr);
double recall(const LabelMap& pred, const LabelMap& real, int class_id);

struct MetricsReport {
  struct Row {
    std::string label;  // class name or "mean"
    double iou = 0, dsc = 0, voe = 0, precision = 0, recall = 0, precision_std = 0;
    bool precision_warned = false;
  };
  std::vector<Row> rows;
  std::string dataset_tag;
  std::string model_tag;

  static const std::vector<std::string>& columns();  // IoU DSC VOE Precision Recall
  std::string to_csv() const;
  std::string to_table() const;
  const Row& row(const std::string& label) const;
  double mean_dsc() const { return row("mean").dsc; }
};

// Slice-wise inference + micro-averaged (count-pooled) per-class metrics over
// the whole split.
MetricsReport evaluate(const FusionNet& model, const Dataset& ds,
                       const std::string& model_tag = "model");

// Report from precomputed per-class pooled counts (class index 1..K-1 order).
MetricsReport report_from_counts(const std::vector<MaskCounts>& per_class,
                                 const std::string& dataset_tag, const std::string& model_tag);

const char* class_name(int class_id);

}  // namespace fusionseg
