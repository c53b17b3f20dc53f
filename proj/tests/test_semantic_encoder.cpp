#include <cmath>

#include "doctest.h"
#include "fusionseg/model/semantic_encoder.hpp"
#include "support/gradcheck.hpp"

using namespace fusionseg;
namespace op = fusionseg::ops;
using testsupport::grad_check;

namespace {

void fill_random(Tensor t, Rng& rng, double scale = 1.0) {
  for (auto& v : t.values()) v = rng.uniform(-scale, scale);
}

void zero_all(ParamStore& ps) {
  for (auto p : ps.all()) std::fill(p.values().begin(), p.values().end(), 0.0);
}

void set_identity(Tensor w) {  // square [D,D]
  int d = w.dim(0);
  REQUIRE(w.dim(1) == d);
  std::fill(w.values().begin(), w.values().end(), 0.0);
  for (int i = 0; i < d; ++i) w.values()[static_cast<size_t>(i) * d + i] = 1.0;
}

ModelConfig patch_test_config() {
  ModelConfig c = toy_model_config(4, 32);
  c.backbone_stages = 1;  // grid 16
  c.patch_size = 4;       // 16 tokens
  c.embed_dim = 8;
  c.n_heads = 2;
  c.mlp_dim = 16;
  c.depth = 2;
  c.local_stages = 3;
  return c;
}

}  // namespace

TEST_CASE("embed_patches: 16x16 grid with P=4 yields 16 tokens") {
  ModelConfig cfg = patch_test_config();
  ParamStore ps;
  Rng rng(3);
  SemanticEncoder enc(ps, rng, cfg);
  Tensor fm = Tensor::zeros({cfg.backbone_base, 16, 16});
  for (auto& v : fm.values()) v = 0.1;
  Tensor tokens = enc.embed_patches(fm);
  CHECK(tokens.shape() == Shape{16, 8});
}

TEST_CASE("embed_patches: zero map and zero position table give zero tokens") {
  ModelConfig cfg = patch_test_config();
  ParamStore ps;
  Rng rng(3);
  SemanticEncoder enc(ps, rng, cfg);
  Tensor fm = Tensor::zeros({cfg.backbone_base, 16, 16});
  Tensor tokens = enc.embed_patches(fm);  // conv bias and positions are zero-initialized
  for (double v : tokens.values()) CHECK(v == 0.0);
}

TEST_CASE("embed_patches: non-divisible size reports the required padding") {
  ModelConfig cfg = patch_test_config();
  ParamStore ps;
  Rng rng(3);
  SemanticEncoder enc(ps, rng, cfg);
  Tensor fm = Tensor::zeros({cfg.backbone_base, 15, 15});
  CHECK_THROWS_WITH_AS(enc.embed_patches(fm), doctest::Contains("pad to 16x16"), ShapeError);
}

TEST_CASE("attention: single token reduces to the projected value row") {
  AttentionConfig ac;
  ac.n_layers = 1;
  ac.n_heads = 1;
  ac.head_dim = 4;
  ac.mlp_dim = 8;
  ParamStore ps;
  Rng rng(5);
  MultiHeadSelfAttention attn(ps, rng, "attn", ac);
  Tensor tok = Tensor::from({1, 4}, {0.3, -0.7, 1.1, 0.2});
  Tensor out = attn(tok);
  Tensor expect = attn.out(attn.v(tok));  // softmax over one element is 1
  for (size_t i = 0; i < out.values().size(); ++i)
    CHECK(out.values()[i] == doctest::Approx(expect.values()[i]).epsilon(1e-12));
  auto rows = attn.attention_rows(tok);
  CHECK(rows[0].item() == doctest::Approx(1.0));
}

TEST_CASE("attention rows are nonnegative and sum to one") {
  AttentionConfig ac;
  ac.n_heads = 2;
  ac.head_dim = 3;
  ac.mlp_dim = 8;
  ParamStore ps;
  Rng rng(6);
  MultiHeadSelfAttention attn(ps, rng, "attn", ac);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor tok = Tensor::zeros({5, 6});
    fill_random(tok, rng, 2.0);
    for (const Tensor& rows : attn.attention_rows(tok)) {
      for (double v : rows.values()) CHECK(v >= 0.0);
      for (int r = 0; r < rows.dim(0); ++r) {
        double s = 0.0;
        for (int j = 0; j < rows.dim(1); ++j) s += rows.values()[static_cast<size_t>(r) * rows.dim(1) + j];
        CHECK(std::fabs(s - 1.0) < 1e-6);
      }
    }
  }
}

TEST_CASE("attention matches a brute-force two-token oracle with identity weights") {
  AttentionConfig ac;
  ac.n_heads = 1;
  ac.head_dim = 2;
  ac.mlp_dim = 4;
  ParamStore ps;
  Rng rng(7);
  MultiHeadSelfAttention attn(ps, rng, "attn", ac);
  set_identity(attn.q.w);
  set_identity(attn.k.w);
  set_identity(attn.v.w);
  set_identity(attn.out.w);

  const double x[2][2] = {{0.6, -0.2}, {1.3, 0.4}};
  Tensor tok = Tensor::from({2, 2}, {x[0][0], x[0][1], x[1][0], x[1][1]});
  Tensor out = attn(tok);

  // direct evaluation: logits_ij = <x_i, x_j>/sqrt(2); rows softmaxed; mix V
  double inv = 1.0 / std::sqrt(2.0);
  double expect[2][2];
  for (int i = 0; i < 2; ++i) {
    double l0 = (x[i][0] * x[0][0] + x[i][1] * x[0][1]) * inv;
    double l1 = (x[i][0] * x[1][0] + x[i][1] * x[1][1]) * inv;
    double m = std::max(l0, l1);
    double e0 = std::exp(l0 - m), e1 = std::exp(l1 - m);
    double a0 = e0 / (e0 + e1), a1 = e1 / (e0 + e1);
    expect[i][0] = a0 * x[0][0] + a1 * x[1][0];
    expect[i][1] = a0 * x[0][1] + a1 * x[1][1];
  }
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 2; ++j)
      CHECK(out.values()[static_cast<size_t>(i) * 2 + j] ==
            doctest::Approx(expect[i][j]).epsilon(1e-12));
}

TEST_CASE("attention and blocks are permutation-equivariant") {
  AttentionConfig ac;
  ac.n_heads = 2;
  ac.head_dim = 4;
  ac.mlp_dim = 12;
  ParamStore ps;
  Rng rng(8);
  TransformerBlock blk(ps, rng, "blk", ac);
  Tensor tok = Tensor::zeros({6, 8});
  fill_random(tok, rng);

  std::vector<int> perm = {4, 0, 5, 2, 1, 3};
  Tensor ptok = Tensor::zeros({6, 8});
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 8; ++j)
      ptok.values()[static_cast<size_t>(i) * 8 + j] =
          tok.values()[static_cast<size_t>(perm[static_cast<size_t>(i)]) * 8 + j];

  Tensor out = blk(tok, 0.0, nullptr);
  Tensor pout = blk(ptok, 0.0, nullptr);
  for (int i = 0; i < 6; ++i)
    for (int j = 0; j < 8; ++j)
      CHECK(pout.values()[static_cast<size_t>(i) * 8 + j] ==
            doctest::Approx(out.values()[static_cast<size_t>(perm[static_cast<size_t>(i)]) * 8 + j])
                .epsilon(1e-9));
}

TEST_CASE("permuting patches together with position rows permutes the tokens") {
  ModelConfig cfg = patch_test_config();
  cfg.patch_size = 8;  // 2x2 patch grid -> 4 tokens, patch-block permutation below
  ParamStore ps;
  Rng rng(9);
  SemanticEncoder enc(ps, rng, cfg);
  Tensor pos = enc.position_table();
  for (auto& v : pos.values()) v = rng.uniform(-0.5, 0.5);

  Tensor fm = Tensor::zeros({cfg.backbone_base, 16, 16});
  fill_random(fm, rng);
  Tensor tokens = enc.embed_patches(fm);

  // swap the two top patches (blocks of 8x8) and the matching position rows
  Tensor fm2 = Tensor::zeros({cfg.backbone_base, 16, 16});
  fm2.values() = fm.values();
  for (int c = 0; c < cfg.backbone_base; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 8; ++x)
        std::swap(fm2.values()[(static_cast<size_t>(c) * 16 + y) * 16 + x],
                  fm2.values()[(static_cast<size_t>(c) * 16 + y) * 16 + x + 8]);
  for (int j = 0; j < cfg.embed_dim; ++j)
    std::swap(pos.values()[static_cast<size_t>(0) * cfg.embed_dim + j],
              pos.values()[static_cast<size_t>(1) * cfg.embed_dim + j]);
  Tensor tokens2 = enc.embed_patches(fm2);

  for (int j = 0; j < cfg.embed_dim; ++j) {
    CHECK(tokens2.values()[static_cast<size_t>(0) * cfg.embed_dim + j] ==
          doctest::Approx(tokens.values()[static_cast<size_t>(1) * cfg.embed_dim + j]).epsilon(1e-12));
    CHECK(tokens2.values()[static_cast<size_t>(1) * cfg.embed_dim + j] ==
          doctest::Approx(tokens.values()[static_cast<size_t>(0) * cfg.embed_dim + j]).epsilon(1e-12));
    CHECK(tokens2.values()[static_cast<size_t>(2) * cfg.embed_dim + j] ==
          doctest::Approx(tokens.values()[static_cast<size_t>(2) * cfg.embed_dim + j]).epsilon(1e-12));
  }
}

TEST_CASE("encode_semantic: output scale, zero-weight nulling, skip count") {
  ModelConfig cfg = toy_model_config(4, 64);
  cfg.depth = 2;
  cfg.embed_dim = 16;
  cfg.mlp_dim = 32;
  ParamStore ps;
  Rng rng(10);
  SemanticEncoder enc(ps, rng, cfg);

  Tensor img = Tensor::zeros({1, 64, 64});
  Rng noise(11);
  for (auto& v : img.values()) v = noise.uniform();
  auto out = enc.forward(img);
  CHECK(out.semantic_fm.dim(1) == 64 / cfg.backbone_stride());
  CHECK(out.semantic_fm.dim(2) == 8);
  CHECK(static_cast<int>(out.skips.size()) == cfg.backbone_stages);
  for (double v : out.semantic_fm.values()) CHECK(std::isfinite(v));

  // config-walk oracle: expected skip sizes halve per stage
  int size = 64;
  for (int s = 0; s < cfg.backbone_stages; ++s) {
    size /= 2;
    CHECK(out.skips[static_cast<size_t>(s)].dim(1) == size);
    CHECK(out.skips[static_cast<size_t>(s)].dim(0) == (cfg.backbone_base << s));
  }

  zero_all(ps);
  auto zout = enc.forward(img);
  for (double v : zout.semantic_fm.values()) CHECK(v == 0.0);

  Tensor bad = Tensor::zeros({1, 32, 32});
  CHECK_THROWS_AS(enc.forward(bad), ShapeError);
}

TEST_CASE("encode_semantic gradients match finite differences on a 16x16 input") {
  ModelConfig cfg;
  cfg.input_size = 16;
  cfg.backbone_base = 4;
  cfg.backbone_stages = 2;  // grid 4
  cfg.patch_size = 1;       // 16 tokens
  cfg.embed_dim = 8;
  cfg.n_heads = 2;
  cfg.mlp_dim = 16;
  cfg.depth = 2;
  cfg.local_stages = 3;
  ParamStore ps;
  Rng rng(12);
  SemanticEncoder enc(ps, rng, cfg);

  Tensor img = Tensor::zeros({1, 16, 16});
  Rng noise(13);
  for (auto& v : img.values()) v = noise.uniform();
  Tensor mask = Tensor::zeros({cfg.backbone_base << 1, 4, 4});
  fill_random(mask, noise);

  auto fwd = [&] { return op::sum(op::mul(enc.forward(img).semantic_fm, mask)); };
  auto res = grad_check(fwd, ps.all(), 1e-5, 1);
  INFO("worst: ", res.worst, " over ", res.checked, " checks");
  CHECK(res.max_rel_err < 1e-4);
}
