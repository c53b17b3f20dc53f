#include "fusionseg/deployment.hpp"

#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <sstream>

namespace fusionseg {

using nlohmann::json;

int64_t QuantizedModel::quantized_elements() const {
  int64_t n = 0;
  for (const auto& t : tensors)
    if (t.quantized) n += static_cast<int64_t>(t.q.size());
  return n;
}

void quantize_channel(const double* w, size_t count, int8_t* q, double& scale) {
  double amax = 0.0;
  for (size_t i = 0; i < count; ++i) amax = std::max(amax, std::fabs(w[i]));
  scale = amax > 0.0 ? amax / 127.0 : 1e-12;
  for (size_t i = 0; i < count; ++i) {
    double r = std::nearbyint(w[i] / scale);
    r = std::min(127.0, std::max(-127.0, r));
    q[i] = static_cast<int8_t>(r);
  }
}

namespace {

bool is_kernel(const std::string& name, const Shape& shape) {
  // conv kernels [O,C,kh,kw] and linear kernels [in,out]; everything else
  // (biases, norm affine, position table) stays fp32
  if (name.size() < 2 || name.substr(name.size() - 2) != ".w") return false;
  return shape.size() == 4 || shape.size() == 2;
}

// per-output-channel views: conv rows are contiguous, linear columns are not
void quantize_kernel(const std::string& name, const Shape& shape, const std::vector<float>& w,
                     QuantizedTensor& out) {
  out.quantized = true;
  out.q.resize(w.size());
  if (shape.size() == 4) {
    int O = shape[0];
    size_t per = w.size() / static_cast<size_t>(O);
    out.scales.resize(static_cast<size_t>(O));
    std::vector<double> tmp(per);
    for (int o = 0; o < O; ++o) {
      for (size_t i = 0; i < per; ++i) tmp[i] = w[static_cast<size_t>(o) * per + i];
      quantize_channel(tmp.data(), per, out.q.data() + static_cast<size_t>(o) * per,
                       out.scales[static_cast<size_t>(o)]);
    }
  } else {  // [in, out]: output channel is the column
    int in = shape[0], outw = shape[1];
    out.scales.resize(static_cast<size_t>(outw));
    std::vector<double> col(static_cast<size_t>(in));
    std::vector<int8_t> qcol(static_cast<size_t>(in));
    for (int j = 0; j < outw; ++j) {
      for (int i = 0; i < in; ++i) col[static_cast<size_t>(i)] = w[static_cast<size_t>(i) * outw + j];
      quantize_channel(col.data(), col.size(), qcol.data(), out.scales[static_cast<size_t>(j)]);
      for (int i = 0; i < in; ++i) out.q[static_cast<size_t>(i) * outw + j] = qcol[static_cast<size_t>(i)];
    }
  }
  (void)name;
}

std::vector<float> dequantize_kernel(const QuantizedTensor& t) {
  std::vector<float> w(t.q.size());
  if (t.shape.size() == 4) {
    size_t per = t.q.size() / t.scales.size();
    for (size_t o = 0; o < t.scales.size(); ++o)
      for (size_t i = 0; i < per; ++i)
        w[o * per + i] = static_cast<float>(t.q[o * per + i] * t.scales[o]);
  } else {
    size_t outw = t.scales.size();
    size_t in = t.q.size() / outw;
    for (size_t i = 0; i < in; ++i)
      for (size_t j = 0; j < outw; ++j)
        w[i * outw + j] = static_cast<float>(t.q[i * outw + j] * t.scales[j]);
  }
  return w;
}

void record_range(std::map<std::string, ActivationRange>& ranges, const std::string& name,
                  const Tensor& t) {
  auto [it, fresh] = ranges.emplace(name, ActivationRange{t.values()[0], t.values()[0]});
  for (double v : t.values()) {
    it->second.lo = std::min(it->second.lo, v);
    it->second.hi = std::max(it->second.hi, v);
  }
}

}  // namespace

QuantizedModel quantize_checkpoint(const Checkpoint& ckpt, const Dataset& calibration) {
  if (calibration.samples.empty())
    throw ValidationError("quantize_checkpoint: empty calibration split");
  QuantizedModel qm;
  qm.model_config = ckpt.model_config;
  qm.source_digest = ckpt.payload_digest;
  for (size_t i = 0; i < ckpt.names.size(); ++i) {
    QuantizedTensor t;
    t.name = ckpt.names[i];
    t.shape = ckpt.shapes[i];
    if (is_kernel(t.name, t.shape)) {
      quantize_kernel(t.name, t.shape, ckpt.tensors[i], t);
    } else {
      t.raw = ckpt.tensors[i];
    }
    qm.tensors.push_back(std::move(t));
  }

  // activation calibration: min/max of the inter-module maps over the split
  FusionNet model = model_from_checkpoint(ckpt);
  NoGradGuard ng;
  for (const Sample& s : calibration.samples) {
    Tensor img = Tensor::from({1, s.h, s.w}, s.image);
    Tensor canny = Tensor::from({1, s.h, s.w}, s.canny.values);
    auto sem = model.semantic().forward(img);
    record_range(qm.activation_ranges, "semantic_fm", sem.semantic_fm);
    auto loc = model.local().forward(img);
    record_range(qm.activation_ranges, "local_fm", loc.local_fm);
    auto out = model.forward(img, canny);
    if (out.edge_pred.defined()) record_range(qm.activation_ranges, "edge_pred", out.edge_pred);
    record_range(qm.activation_ranges, "logits", out.logits);
  }
  return qm;
}

Checkpoint dequantize(const QuantizedModel& qm) {
  Checkpoint c;
  c.model_config = qm.model_config;
  c.train_config = json{{"quantized_from", qm.source_digest}};
  for (const auto& t : qm.tensors) {
    c.names.push_back(t.name);
    c.shapes.push_back(t.shape);
    c.tensors.push_back(t.quantized ? dequantize_kernel(t) : t.raw);
  }
  c.base_digest = qm.source_digest;
  return c;
}

namespace {
constexpr char kQMagic[8] = {'F', 'S', 'E', 'G', 'Q', 'N', 'T', '1'};
}

void save_quantized(const std::string& path, const QuantizedModel& qm) {
  json manifest;
  manifest["format_version"] = 1;
  manifest["model_config"] = to_json(qm.model_config);
  manifest["source_digest"] = qm.source_digest;
  json ranges = json::object();
  for (const auto& [name, r] : qm.activation_ranges) ranges[name] = {r.lo, r.hi};
  manifest["activation_ranges"] = ranges;
  json tensors = json::array();
  for (const auto& t : qm.tensors) {
    json jt;
    jt["name"] = t.name;
    jt["shape"] = t.shape;
    jt["quantized"] = t.quantized;
    jt["elements"] = t.quantized ? t.q.size() : t.raw.size();
    jt["channels"] = t.scales.size();
    tensors.push_back(jt);
  }
  manifest["tensors"] = tensors;
  std::string mtext = manifest.dump();

  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write quantized model: " + path);
  f.write(kQMagic, 8);
  uint64_t mlen = mtext.size();
  unsigned char lenbuf[8];
  for (int i = 0; i < 8; ++i) lenbuf[i] = static_cast<unsigned char>((mlen >> (8 * i)) & 0xff);
  f.write(reinterpret_cast<const char*>(lenbuf), 8);
  f.write(mtext.data(), static_cast<std::streamsize>(mtext.size()));
  for (const auto& t : qm.tensors) {
    if (t.quantized) {
      f.write(reinterpret_cast<const char*>(t.q.data()), static_cast<std::streamsize>(t.q.size()));
      for (double s : t.scales) {
        float fs = static_cast<float>(s);
        f.write(reinterpret_cast<const char*>(&fs), sizeof(float));
      }
    } else {
      f.write(reinterpret_cast<const char*>(t.raw.data()),
              static_cast<std::streamsize>(t.raw.size() * sizeof(float)));
    }
  }
  if (!f) throw std::runtime_error("quantized model write failed: " + path);
}

QuantizedModel load_quantized(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw ValidationError("cannot open quantized model: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, kQMagic, 8) != 0)
    throw ValidationError("not a quantized model archive: " + path);
  unsigned char lenbuf[8];
  f.read(reinterpret_cast<char*>(lenbuf), 8);
  uint64_t mlen = 0;
  for (int i = 0; i < 8; ++i) mlen |= static_cast<uint64_t>(lenbuf[i]) << (8 * i);
  std::string mtext(mlen, '\0');
  f.read(mtext.data(), static_cast<std::streamsize>(mlen));
  json manifest = json::parse(mtext);

  QuantizedModel qm;
  qm.model_config = model_config_from_json(manifest.at("model_config"));
  qm.source_digest = manifest.value("source_digest", "");
  for (auto it = manifest.at("activation_ranges").begin();
       it != manifest.at("activation_ranges").end(); ++it)
    qm.activation_ranges[it.key()] = {it.value().at(0).get<double>(),
                                      it.value().at(1).get<double>()};
  for (const auto& jt : manifest.at("tensors")) {
    QuantizedTensor t;
    t.name = jt.at("name").get<std::string>();
    t.shape = jt.at("shape").get<Shape>();
    t.quantized = jt.at("quantized").get<bool>();
    size_t elements = jt.at("elements").get<size_t>();
    size_t channels = jt.at("channels").get<size_t>();
    if (t.quantized) {
      t.q.resize(elements);
      f.read(reinterpret_cast<char*>(t.q.data()), static_cast<std::streamsize>(elements));
      t.scales.resize(channels);
      for (size_t c = 0; c < channels; ++c) {
        float fs = 0;
        f.read(reinterpret_cast<char*>(&fs), sizeof(float));
        t.scales[c] = fs;
      }
    } else {
      t.raw.resize(elements);
      f.read(reinterpret_cast<char*>(t.raw.data()),
             static_cast<std::streamsize>(elements * sizeof(float)));
    }
    if (!f) throw ValidationError("truncated quantized model: " + path);
    qm.tensors.push_back(std::move(t));
  }
  return qm;
}

DistillResult distill(const Checkpoint& teacher, const ModelConfig& student_cfg,
                      const TrainConfig& train_cfg, const Dataset& data, double temperature,
                      double kl_weight) {
  if (temperature <= 0.0) throw ValidationError("distill: temperature must be > 0");
  if (kl_weight < 0.0 || kl_weight > 1.0)
    throw ValidationError("distill: kl_weight must be in [0,1]");
  if (student_cfg.num_classes != teacher.model_config.num_classes)
    throw ValidationError("distill: student and teacher class counts differ");

  FusionNet teacher_model = model_from_checkpoint(teacher);
  FusionNet student(student_cfg, train_cfg.seed);

  DistillResult res;
  int64_t teacher_params = 0;
  for (const auto& t : teacher.tensors) teacher_params += static_cast<int64_t>(t.size());
  res.size_warning = student.params().total_elements() >= teacher_params;

  DistillSpec spec;
  spec.teacher = &teacher_model;
  spec.temperature = temperature;
  spec.kl_weight = kl_weight;
  res.train = train_model(student, train_cfg, data, kl_weight > 0.0 ? &spec : nullptr);

  res.checkpoint = snapshot_model(student, to_json(train_cfg), train_cfg.epochs);
  res.checkpoint.base_digest = teacher.payload_digest;
  res.checkpoint.log_digest =
      digest_hex(fnv1a64(res.train.log_csv.data(), res.train.log_csv.size()));
  return res;
}

ComparisonReport compare_models(const FusionNet& a, const FusionNet& b, const Dataset& ds,
                                const std::string& tag_a, const std::string& tag_b) {
  ComparisonReport rep;
  auto timed_eval = [&](const FusionNet& m, const std::string& tag, double& ms) {
    auto t0 = std::chrono::steady_clock::now();
    MetricsReport r = evaluate(m, ds, tag);
    auto t1 = std::chrono::steady_clock::now();
    ms = std::chrono::duration<double, std::milli>(t1 - t0).count() /
         static_cast<double>(ds.samples.size());
    return r;
  };
  rep.report_a = timed_eval(a, tag_a, rep.ms_per_slice_a);
  rep.report_b = timed_eval(b, tag_b, rep.ms_per_slice_b);

  const auto& ra = rep.report_a.row("mean");
  const auto& rb = rep.report_b.row("mean");
  rep.deltas["IoU"] = rb.iou - ra.iou;
  rep.deltas["DSC"] = rb.dsc - ra.dsc;
  rep.deltas["VOE"] = rb.voe - ra.voe;
  rep.deltas["Precision"] = rb.precision - ra.precision;
  rep.deltas["Recall"] = rb.recall - ra.recall;
  return rep;
}

std::string ComparisonReport::to_csv() const {
  std::ostringstream os;
  os << "model,class,IoU,DSC,VOE,Precision,Recall,ms_per_slice\n";
  char buf[256];
  auto dump = [&](const MetricsReport& r, double ms) {
    for (const auto& row : r.rows) {
      std::snprintf(buf, sizeof(buf), "%s,%s,%.6f,%.6f,%.6f,%.6f,%.6f,%.3f\n",
                    r.model_tag.c_str(), row.label.c_str(), row.iou, row.dsc, row.voe,
                    row.precision, row.recall, ms);
      os << buf;
    }
  };
  dump(report_a, ms_per_slice_a);
  dump(report_b, ms_per_slice_b);
  for (const auto& [metric, d] : deltas) {
    std::snprintf(buf, sizeof(buf), "delta,%s,%.6f\n", metric.c_str(), d);
    os << buf;
  }
  return os.str();
}

std::string ComparisonReport::to_table() const {
  std::ostringstream os;
  os << report_a.to_table() << report_b.to_table();
  char buf[256];
  std::snprintf(buf, sizeof(buf), "inference: %s %.2f ms/slice, %s %.2f ms/slice\n",
                report_a.model_tag.c_str(), ms_per_slice_a, report_b.model_tag.c_str(),
                ms_per_slice_b);
  os << buf;
  for (const auto& [metric, d] : deltas) {
    std::snprintf(buf, sizeof(buf), "delta %-10s %+.4f\n", metric.c_str(), d);
    os << buf;
  }
  return os.str();
}

}  // namespace fusionseg
