#include "fusionseg/nn.hpp"

#include <cmath>

namespace fusionseg {

Tensor ParamStore::add(const std::string& name, Shape shape, std::vector<double> values) {
  for (const auto& p : params_)
    if (p.name() == name) throw ConfigError("duplicate parameter name: " + name);
  Tensor t = Tensor::param(std::move(shape), std::move(values), name);
  params_.push_back(t);
  return t;
}

Tensor ParamStore::find(const std::string& name) const {
  for (const auto& p : params_)
    if (p.name() == name) return p;
  return Tensor();
}

int64_t ParamStore::total_elements() const {
  int64_t n = 0;
  for (const auto& p : params_) n += p.size();
  return n;
}

std::vector<double> make_init(Init kind, Shape shape, int fan_in, Rng& rng) {
  std::vector<double> v(static_cast<size_t>(numel(shape)));
  switch (kind) {
    case Init::kZero:
      break;
    case Init::kOne:
      std::fill(v.begin(), v.end(), 1.0);
      break;
    case Init::kConvFanIn: {
      double bound = std::sqrt(6.0 / std::max(1, fan_in));
      for (auto& x : v) x = rng.uniform(-bound, bound);
      break;
    }
    case Init::kTruncNormal002:
      for (auto& x : v) x = rng.truncated_normal(0.02);
      break;
  }
  return v;
}

Conv2dLayer::Conv2dLayer(ParamStore& ps, Rng& rng, const std::string& name, int in_ch, int out_ch,
                         int k, int stride_, int pad_, bool bias, Init init)
    : stride(stride_), pad(pad_) {
  int fan_in = in_ch * k * k;
  w = ps.add(name + ".w", {out_ch, in_ch, k, k}, make_init(init, {out_ch, in_ch, k, k}, fan_in, rng));
  if (bias) b = ps.add(name + ".b", {out_ch}, make_init(Init::kZero, {out_ch}, fan_in, rng));
}

LinearLayer::LinearLayer(ParamStore& ps, Rng& rng, const std::string& name, int in, int out,
                         Init init) {
  w = ps.add(name + ".w", {in, out}, make_init(init, {in, out}, in, rng));
  b = ps.add(name + ".b", {out}, make_init(Init::kZero, {out}, in, rng));
}

GroupNormLayer::GroupNormLayer(ParamStore& ps, const std::string& name, int channels, int groups_)
    : groups(groups_) {
  Rng unused(0);
  gamma = ps.add(name + ".gamma", {channels}, make_init(Init::kOne, {channels}, channels, unused));
  beta = ps.add(name + ".beta", {channels}, make_init(Init::kZero, {channels}, channels, unused));
}

LayerNormLayer::LayerNormLayer(ParamStore& ps, const std::string& name, int dim) {
  Rng unused(0);
  gamma = ps.add(name + ".gamma", {dim}, make_init(Init::kOne, {dim}, dim, unused));
  beta = ps.add(name + ".beta", {dim}, make_init(Init::kZero, {dim}, dim, unused));
}

// Largest divisor of C with at most 8 groups and at least 4 channels per
// group. Per-channel groups would make the spatial mean of the normalized map
// exactly beta, collapsing any squeeze-excitation fed from it.
int norm_groups(int channels) {
  int cap = std::min(8, channels / 4);
  for (int g = cap; g > 1; --g)
    if (channels % g == 0) return g;
  return 1;
}

}  // namespace fusionseg
