#include "fusionseg/metrics.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "fusionseg/model/network.hpp"

namespace fusionseg {

MaskCounts count_masks(const LabelMap& pred, const LabelMap& real, int class_id) {
  if (pred.n != real.n || pred.h != real.h || pred.w != real.w)
    throw ShapeError(cat("count_masks: pred ", pred.n, "x", pred.h, "x", pred.w, " vs real ",
                         real.n, "x", real.h, "x", real.w));
  MaskCounts c;
  c.total = static_cast<int64_t>(pred.labels.size());
  for (size_t i = 0; i < pred.labels.size(); ++i) {
    bool p = pred.labels[i] == class_id;
    bool r = real.labels[i] == class_id;
    c.pred += p;
    c.real += r;
    c.inter += (p && r);
  }
  return c;
}

double iou_from(const MaskCounts& c) {
  int64_t u = c.unite();
  return u == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(u);
}

double dsc_from(const MaskCounts& c) {
  int64_t den = c.pred + c.real;
  return den == 0 ? 1.0 : 2.0 * static_cast<double>(c.inter) / static_cast<double>(den);
}

double voe_from(const MaskCounts& c) {
  int64_t den = c.pred + c.real;
  return den == 0 ? 0.0 : 2.0 * static_cast<double>(c.pred - c.real) / static_cast<double>(den);
}

double precision_paper_from(const MaskCounts& c, bool* warned) {
  if (warned) *warned = false;
  int64_t den = c.total - c.real;
  if (den == 0) {
    if (warned) *warned = true;
    return 1.0;
  }
  return static_cast<double>(c.total - c.unite()) / static_cast<double>(den);
}

double recall_from(const MaskCounts& c) {
  return c.real == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(c.real);
}

double precision_std_from(const MaskCounts& c) {
  return c.pred == 0 ? 1.0 : static_cast<double>(c.inter) / static_cast<double>(c.pred);
}

double iou(const LabelMap& pred, const LabelMap& real, int class_id) {
  return iou_from(count_masks(pred, real, class_id));
}
double dsc(const LabelMap& pred, const LabelMap& real, int class_id) {
  return dsc_from(count_masks(pred, real, class_id));
}
double voe(const LabelMap& pred, const LabelMap& real, int class_id) {
  return voe_from(count_masks(pred, real, class_id));
}
double precision_paper(const LabelMap& pred, const LabelMap& real, int class_id, bool* warned) {
  return precision_paper_from(count_masks(pred, real, class_id), warned);
}
double recall(const LabelMap& pred, const LabelMap& real, int class_id) {
  return recall_from(count_masks(pred, real, class_id));
}

const char* class_name(int class_id) {
  switch (class_id) {
    case 0: return "background";
    case 1: return "tumor";
    case 2: return "vessel";
    default: return "class";
  }
}

const std::vector<std::string>& MetricsReport::columns() {
  static const std::vector<std::string> kCols = {"IoU", "DSC", "VOE", "Precision", "Recall"};
  return kCols;
}

const MetricsReport::Row& MetricsReport::row(const std::string& label) const {
  for (const auto& r : rows)
    if (r.label == label) return r;
  throw ValidationError("MetricsReport: no row labeled " + label);
}

std::string MetricsReport::to_csv() const {
  std::ostringstream os;
  os << "dataset,model,class,IoU,DSC,VOE,Precision,Recall,precision_std\n";
  char buf[256];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%s,%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.6f\n",
                  dataset_tag.c_str(), model_tag.c_str(), r.label.c_str(), r.iou, r.dsc, r.voe,
                  r.precision, r.recall, r.precision_std);
    os << buf;
  }
  return os.str();
}

std::string MetricsReport::to_table() const {
  std::ostringstream os;
  char buf[256];
  std::snprintf(buf, sizeof(buf), "%-10s %-10s %8s %8s %8s %10s %8s\n", dataset_tag.c_str(),
                "class", "IoU", "DSC", "VOE", "Precision", "Recall");
  os << buf;
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%-10s %-10s %8.3f %8.3f %8.3f %10.3f %8.3f%s\n",
                  model_tag.c_str(), r.label.c_str(), r.iou, r.dsc, r.voe, r.precision, r.recall,
                  r.precision_warned ? " *" : "");
    os << buf;
  }
  return os.str();
}

MetricsReport report_from_counts(const std::vector<MaskCounts>& per_class,
                                 const std::string& dataset_tag, const std::string& model_tag) {
  MetricsReport rep;
  rep.dataset_tag = dataset_tag;
  rep.model_tag = model_tag;
  MetricsReport::Row mean;
  mean.label = "mean";
  for (size_t c = 0; c < per_class.size(); ++c) {
    MetricsReport::Row r;
    r.label = class_name(static_cast<int>(c) + 1);
    r.iou = iou_from(per_class[c]);
    r.dsc = dsc_from(per_class[c]);
    r.voe = voe_from(per_class[c]);
    r.precision = precision_paper_from(per_class[c], &r.precision_warned);
    r.recall = recall_from(per_class[c]);
    r.precision_std = precision_std_from(per_class[c]);
    mean.iou += r.iou;
    mean.dsc += r.dsc;
    mean.voe += r.voe;
    mean.precision += r.precision;
    mean.recall += r.recall;
    mean.precision_std += r.precision_std;
    rep.rows.push_back(r);
  }
  if (!per_class.empty()) {
    double inv = 1.0 / static_cast<double>(per_class.size());
    mean.iou *= inv;
    mean.dsc *= inv;
    mean.voe *= inv;
    mean.precision *= inv;
    mean.recall *= inv;
    mean.precision_std *= inv;
  }
  rep.rows.push_back(mean);
  return rep;
}

MetricsReport evaluate(const FusionNet& model, const Dataset& ds, const std::string& model_tag) {
  if (ds.samples.empty()) throw ValidationError("evaluate: empty dataset");
  int K = model.config().num_classes;
  std::vector<MaskCounts> pooled(static_cast<size_t>(K - 1));
  for (const Sample& s : ds.samples) {
    LabelMap pred = model.segment_slice(s.image, s.h, s.w);
    for (int c = 1; c < K; ++c) pooled[static_cast<size_t>(c - 1)] += count_masks(pred, s.labels, c);
  }
  return report_from_counts(pooled, ds.split_tag, model_tag);
}

}  // namespace fusionseg
