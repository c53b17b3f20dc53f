#include <cmath>
#include <vector>

#include "doctest.h"
#include "fusionseg/ops.hpp"
#include "fusionseg/rng.hpp"
#include "fusionseg/tensor.hpp"
#include "support/gradcheck.hpp"

using namespace fusionseg;
namespace op = fusionseg::ops;
using testsupport::grad_check;

namespace {

Tensor rand_param(Shape s, Rng& rng, const std::string& name, double scale = 1.0) {
  std::vector<double> v(static_cast<size_t>(numel(s)));
  for (auto& x : v) x = rng.uniform(-scale, scale);
  return Tensor::param(std::move(s), std::move(v), name);
}

}  // namespace

TEST_CASE("forward values of basic ops") {
  Tensor a = Tensor::from({2, 2}, {1.0, 2.0, 3.0, 4.0});
  Tensor b = Tensor::from({2, 2}, {0.5, -1.0, 2.0, 0.0});
  CHECK(op::add(a, b).values() == std::vector<double>{1.5, 1.0, 5.0, 4.0});
  CHECK(op::sub(a, b).values() == std::vector<double>{0.5, 3.0, 1.0, 4.0});
  CHECK(op::mul(a, b).values() == std::vector<double>{0.5, -2.0, 6.0, 0.0});
  CHECK(op::sum(a).item() == doctest::Approx(10.0));
  CHECK(op::mean(a).item() == doctest::Approx(2.5));
  CHECK(op::relu(b).values() == std::vector<double>{0.5, 0.0, 2.0, 0.0});
  CHECK(op::sigmoid(Tensor::from({1}, {0.0})).item() == doctest::Approx(0.5));
}

TEST_CASE("matmul agrees with hand computation") {
  Tensor a = Tensor::from({2, 3}, {1, 2, 3, 4, 5, 6});
  Tensor b = Tensor::from({3, 2}, {7, 8, 9, 10, 11, 12});
  Tensor c = op::matmul(a, b);
  CHECK(c.values() == std::vector<double>{58, 64, 139, 154});
  Tensor bt = Tensor::from({2, 3}, {7, 9, 11, 8, 10, 12});
  CHECK(op::matmul_nt(a, bt).values() == std::vector<double>{58, 64, 139, 154});
}

TEST_CASE("softmax rows sum to one and are invariant to shifts") {
  Rng rng(11);
  Tensor x = rand_param({5, 7}, rng, "x", 3.0);
  Tensor y = op::softmax_rows(x);
  for (int r = 0; r < 5; ++r) {
    double s = 0.0;
    for (int j = 0; j < 7; ++j) s += y.values()[static_cast<size_t>(r) * 7 + j];
    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
  }
  Tensor xs = op::add_scalar(x, 123.0);
  Tensor ys = op::softmax_rows(xs);
  for (size_t i = 0; i < y.values().size(); ++i)
    CHECK(ys.values()[i] == doctest::Approx(y.values()[i]).epsilon(1e-9));
}

TEST_CASE("gradcheck: elementwise and reductions") {
  Rng rng(42);
  Tensor a = rand_param({3, 4}, rng, "a");
  Tensor b = rand_param({3, 4}, rng, "b");
  // keep b away from 0 for div
  for (auto& v : b.values()) v += (v >= 0 ? 1.5 : -1.5);

  auto check = [&](const char* what, std::function<Tensor()> fwd) {
    auto res = grad_check(fwd, {a, b});
    INFO(what, ": ", res.worst);
    CHECK(res.max_rel_err < 1e-6);
  };
  check("add", [&] { return op::sum(op::mul(op::add(a, b), b)); });
  check("sub", [&] { return op::sum(op::mul(op::sub(a, b), a)); });
  check("div", [&] { return op::sum(op::div(a, b)); });
  check("mean", [&] { return op::mean(op::mul(a, a)); });
  check("silu", [&] { return op::sum(op::silu(a)); });
  check("gelu", [&] { return op::sum(op::gelu(a)); });
  check("sigmoid", [&] { return op::sum(op::sigmoid(a)); });
  check("mul_scalar", [&] { return op::sum(op::mul_scalar(a, -2.5)); });
  check("add_scalar", [&] { return op::mean(op::add_scalar(a, 0.7)); });
}

TEST_CASE("gradcheck: matmul family") {
  Rng rng(7);
  Tensor a = rand_param({4, 3}, rng, "a");
  Tensor b = rand_param({3, 5}, rng, "b");
  Tensor bt = rand_param({5, 3}, rng, "bt");
  Tensor bias = rand_param({5}, rng, "bias");
  auto res = grad_check([&] { return op::sum(op::mul(op::matmul(a, b), op::matmul(a, b))); }, {a, b});
  CHECK(res.max_rel_err < 1e-6);
  res = grad_check([&] { return op::sum(op::matmul_nt(a, bt)); }, {a, bt});
  CHECK(res.max_rel_err < 1e-6);
  res = grad_check([&] { return op::sum(op::silu(op::add_rows(op::matmul_nt(a, bt), bias))); },
                   {a, bt, bias});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck: softmax, layer norm, group norm") {
  Rng rng(13);
  Tensor x = rand_param({4, 6}, rng, "x", 2.0);
  Tensor w = rand_param({4, 6}, rng, "w");
  auto res = grad_check([&] { return op::sum(op::mul(op::softmax_rows(x), w)); }, {x});
  CHECK(res.max_rel_err < 1e-6);

  Tensor gamma = rand_param({6}, rng, "gamma");
  Tensor beta = rand_param({6}, rng, "beta");
  res = grad_check([&] { return op::sum(op::mul(op::layer_norm(x, gamma, beta), w)); },
                   {x, gamma, beta});
  CHECK(res.max_rel_err < 1e-5);

  Tensor fm = rand_param({4, 3, 5}, rng, "fm", 2.0);
  Tensor wk = rand_param({4, 3, 5}, rng, "wk");
  Tensor g2 = rand_param({4}, rng, "g2");
  Tensor b2 = rand_param({4}, rng, "b2");
  res = grad_check([&] { return op::sum(op::mul(op::group_norm(fm, g2, b2, 2), wk)); },
                   {fm, g2, b2});
  CHECK(res.max_rel_err < 1e-5);

  Tensor kx = rand_param({3, 2, 2}, rng, "kx", 2.0);
  Tensor kw = rand_param({3, 2, 2}, rng, "kw");
  res = grad_check([&] { return op::sum(op::mul(op::softmax_channels(kx), kw)); }, {kx});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("gradcheck: conv2d stride and padding variants") {
  Rng rng(99);
  for (int stride : {1, 2}) {
    for (int pad : {0, 1}) {
      Tensor x = rand_param({2, 6, 6}, rng, "x");
      Tensor w = rand_param({3, 2, 3, 3}, rng, "w");
      Tensor b = rand_param({3}, rng, "b");
      Tensor mask = rand_param({3, (6 + 2 * pad - 3) / stride + 1, (6 + 2 * pad - 3) / stride + 1},
                               rng, "mask");
      auto res = grad_check(
          [&] { return op::sum(op::mul(op::conv2d(x, w, b, stride, pad), mask)); }, {x, w, b});
      INFO("stride=", stride, " pad=", pad, " worst=", res.worst);
      CHECK(res.max_rel_err < 1e-6);
    }
  }
  // 1x1 conv, no bias
  Tensor x = rand_param({3, 4, 4}, rng, "x");
  Tensor w = rand_param({2, 3, 1, 1}, rng, "w");
  auto res = grad_check([&] { return op::sum(op::conv2d(x, w, Tensor(), 1, 0)); }, {x, w});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("conv2d rejects bad geometry") {
  Tensor x = Tensor::zeros({1, 4, 4});
  Tensor w = Tensor::zeros({1, 1, 5, 5});
  CHECK_THROWS_AS(op::conv2d(x, w, Tensor(), 1, 0), ShapeError);
  Tensor w2 = Tensor::zeros({1, 2, 3, 3});
  CHECK_THROWS_AS(op::conv2d(x, w2, Tensor(), 1, 1), ShapeError);
}

TEST_CASE("gradcheck: pooling and resampling") {
  Rng rng(5);
  Tensor x = rand_param({2, 6, 6}, rng, "x");
  auto res = grad_check([&] { return op::sum(op::max_pool2x2(x)); }, {x});
  CHECK(res.max_rel_err < 1e-6);

  Tensor m = rand_param({2, 3, 3}, rng, "m");
  res = grad_check([&] { return op::sum(op::mul(op::avg_pool(x, 2), m)); }, {x});
  CHECK(res.max_rel_err < 1e-6);

  Tensor small = rand_param({2, 3, 3}, rng, "small");
  Tensor mask = rand_param({2, 7, 5}, rng, "mask");
  res = grad_check([&] { return op::sum(op::mul(op::upsample_bilinear(small, 7, 5), mask)); },
                   {small});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("max pooling floors odd sizes") {
  Tensor x = Tensor::from({1, 5, 5}, std::vector<double>(25, 1.0));
  Tensor y = op::max_pool2x2(x);
  CHECK(y.shape() == Shape{1, 2, 2});
}

TEST_CASE("gradcheck: broadcast and slicing ops") {
  Rng rng(21);
  Tensor x = rand_param({3, 4, 4}, rng, "x");
  Tensor s = rand_param({3}, rng, "s");
  auto res = grad_check([&] { return op::sum(op::scale_channels(x, s)); }, {x, s});
  CHECK(res.max_rel_err < 1e-6);

  Tensor alpha = rand_param({1, 4, 4}, rng, "alpha");
  res = grad_check([&] { return op::sum(op::mul_spatial(x, alpha)); }, {x, alpha});
  CHECK(res.max_rel_err < 1e-6);

  Tensor m3 = rand_param({3}, rng, "m3");
  res = grad_check([&] { return op::sum(op::mul(op::global_avg_channels(x), m3)); }, {x, m3});
  CHECK(res.max_rel_err < 1e-6);

  res = grad_check([&] { return op::sum(op::slice_channels(x, 1, 3)); }, {x});
  CHECK(res.max_rel_err < 1e-6);

  res = grad_check([&] { return op::sum(op::sum_channel_range(x, 1, 3)); }, {x});
  CHECK(res.max_rel_err < 1e-6);

  Tensor y = rand_param({2, 3, 3}, rng, "y");
  res = grad_check(
      [&] {
        auto cat = op::concat_channels({x, op::upsample_bilinear(y, 4, 4)});
        return op::sum(op::mul(cat, cat));
      },
      {x, y});
  CHECK(res.max_rel_err < 1e-6);

  Tensor t = rand_param({6, 5}, rng, "t");
  res = grad_check([&] { return op::sum(op::mul(op::cols(t, 1, 4), op::cols(t, 1, 4))); }, {t});
  CHECK(res.max_rel_err < 1e-6);
  res = grad_check(
      [&] {
        auto joined = op::concat_cols({op::cols(t, 0, 2), op::cols(t, 2, 5)});
        return op::sum(op::mul(joined, joined));
      },
      {t});
  CHECK(res.max_rel_err < 1e-6);

  Tensor grid = rand_param({4, 2, 3}, rng, "grid");
  res = grad_check(
      [&] {
        auto tok = op::chw_to_tokens(grid);
        return op::sum(op::mul(tok, tok));
      },
      {grid});
  CHECK(res.max_rel_err < 1e-6);
  Tensor toks = rand_param({6, 4}, rng, "toks");
  res = grad_check(
      [&] {
        auto g = op::tokens_to_chw(toks, 2, 3);
        return op::sum(op::mul(g, g));
      },
      {toks});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("tokens round trip preserves layout") {
  Tensor grid = Tensor::from({2, 2, 2}, {1, 2, 3, 4, 5, 6, 7, 8});
  Tensor tok = op::chw_to_tokens(grid);
  CHECK(tok.shape() == Shape{4, 2});
  // token 0 is pixel (0,0): channel values 1 and 5
  CHECK(tok.values()[0] == 1.0);
  CHECK(tok.values()[1] == 5.0);
  Tensor back = op::tokens_to_chw(tok, 2, 2);
  CHECK(back.values() == grid.values());
}

TEST_CASE("gradcheck: fused losses") {
  Rng rng(31);
  Tensor logits = rand_param({3, 4, 4}, rng, "logits", 2.0);
  std::vector<int> labels(16);
  for (auto& l : labels) l = static_cast<int>(rng.uniform_int(3));
  auto res = grad_check([&] { return op::cross_entropy_channels(logits, labels); }, {logits});
  CHECK(res.max_rel_err < 1e-6);

  Tensor pred = rand_param({1, 4, 4}, rng, "pred");
  for (auto& v : pred.values()) v = 0.05 + 0.9 * std::fabs(v);  // keep inside clamp zone
  std::vector<double> tgt(16);
  for (auto& t : tgt) t = rng.uniform() < 0.5 ? 0.0 : 1.0;
  res = grad_check([&] { return op::bce_mean(pred, tgt); }, {pred});
  CHECK(res.max_rel_err < 1e-5);

  std::vector<double> teacher(3 * 16);
  for (size_t p = 0; p < 16; ++p) {
    double a = rng.uniform(0.1, 1.0), b = rng.uniform(0.1, 1.0), c = rng.uniform(0.1, 1.0);
    double z = a + b + c;
    teacher[p] = a / z;
    teacher[16 + p] = b / z;
    teacher[32 + p] = c / z;
  }
  res = grad_check([&] { return op::kl_channels(logits, teacher, 2.0); }, {logits});
  CHECK(res.max_rel_err < 1e-6);
}

TEST_CASE("cross entropy of uniform logits is ln K") {
  Tensor logits = Tensor::param({3, 2, 2}, std::vector<double>(12, 0.4), "l");
  std::vector<int> labels = {0, 1, 2, 0};
  CHECK(op::cross_entropy_channels(logits, labels).item() == doctest::Approx(std::log(3.0)));
}

TEST_CASE("kl divergence matches scalar oracle") {
  // teacher (0.8, 0.2), student (0.6, 0.4) on a single pixel;
  // logits = ln(p) reproduce the distributions exactly at T=1
  Tensor logits = Tensor::param({2, 1, 1}, {std::log(0.6), std::log(0.4)}, "z");
  std::vector<double> teacher = {0.8, 0.2};
  double expect = 0.8 * std::log(0.8 / 0.6) + 0.2 * std::log(0.2 / 0.4);
  CHECK(op::kl_channels(logits, teacher, 1.0).item() == doctest::Approx(expect).epsilon(1e-12));
  CHECK(expect == doctest::Approx(0.0915).epsilon(1e-2));
}

TEST_CASE("backward accumulates through shared subgraphs") {
  Tensor x = Tensor::param({1}, {3.0}, "x");
  Tensor y = op::mul(x, x);          // x^2
  Tensor z = op::add(y, op::mul_scalar(x, 2.0));  // x^2 + 2x
  Gradients gs = backward(op::sum(z));
  CHECK(gs.at(x)[0] == doctest::Approx(2.0 * 3.0 + 2.0));
}

TEST_CASE("no_grad mode records nothing") {
  Tensor x = Tensor::param({1}, {2.0}, "x");
  NoGradGuard guard;
  Tensor y = op::mul(x, x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("dropout scales kept values and is deterministic per seed") {
  Rng rng1(8), rng2(8);
  Tensor x = Tensor::param({1, 10, 10}, std::vector<double>(100, 1.0), "x");
  Tensor d1 = op::dropout(x, 0.3, rng1);
  Tensor d2 = op::dropout(x, 0.3, rng2);
  CHECK(d1.values() == d2.values());
  for (double v : d1.values()) CHECK((v == 0.0 || v == doctest::Approx(1.0 / 0.7)));
}
