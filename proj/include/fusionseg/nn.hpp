#pragma once

#include <string>
#include <vector>

#include "fusionseg/ops.hpp"
#include "fusionseg/rng.hpp"
#include "fusionseg/tensor.hpp"

namespace fusionseg {

// Ordered registry of named parameters. Registration order is fixed by model
// construction, which makes initialization and checkpoint layout a pure
// function of the model configuration.
class ParamStore {
 public:
  Tensor add(const std::string& name, Shape shape, std::vector<double> values);
  const std::vector<Tensor>& all() const { return params_; }
  Tensor find(const std::string& name) const;  // undefined Tensor when absent
  int64_t total_elements() const;

 private:
  std::vector<Tensor> params_;
};

enum class Init {
  kZero,
  kOne,
  kConvFanIn,       // uniform +-sqrt(6/fan_in)
  kTruncNormal002,  // truncated normal, std 0.02
};

std::vector<double> make_init(Init kind, Shape shape, int fan_in, Rng& rng);

struct Conv2dLayer {
  Tensor w, b;
  int stride = 1, pad = 0;

  Conv2dLayer() = default;
  Conv2dLayer(ParamStore& ps, Rng& rng, const std::string& name, int in_ch, int out_ch, int k,
              int stride, int pad, bool bias = true, Init init = Init::kConvFanIn);
  Tensor operator()(const Tensor& x) const { return ops::conv2d(x, w, b, stride, pad); }
};

struct LinearLayer {
  Tensor w;  // [in, out]
  Tensor b;

  LinearLayer() = default;
  LinearLayer(ParamStore& ps, Rng& rng, const std::string& name, int in, int out,
              Init init = Init::kTruncNormal002);
  Tensor operator()(const Tensor& x) const { return ops::add_rows(ops::matmul(x, w), b); }
};

struct GroupNormLayer {
  Tensor gamma, beta;
  int groups = 1;

  GroupNormLayer() = default;
  GroupNormLayer(ParamStore& ps, const std::string& name, int channels, int groups);
  Tensor operator()(const Tensor& x) const { return ops::group_norm(x, gamma, beta, groups); }
};

struct LayerNormLayer {
  Tensor gamma, beta;

  LayerNormLayer() = default;
  LayerNormLayer(ParamStore& ps, const std::string& name, int dim);
  Tensor operator()(const Tensor& x) const { return ops::layer_norm(x, gamma, beta); }
};

// Channel count for grouped normalization: at most 8 groups, and always a
// divisor of the channel count.
int norm_groups(int channels);

}  // namespace fusionseg
