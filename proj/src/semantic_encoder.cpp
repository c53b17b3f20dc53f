#include "fusionseg/model/semantic_encoder.hpp"

#include <cmath>

namespace fusionseg {

namespace op = ops;

MultiHeadSelfAttention::MultiHeadSelfAttention(ParamStore& ps, Rng& rng, const std::string& name,
                                               const AttentionConfig& c)
    : cfg(c) {
  cfg.validate();
  int d = cfg.embed_dim();
  q = LinearLayer(ps, rng, name + ".q", d, d);
  k = LinearLayer(ps, rng, name + ".k", d, d);
  v = LinearLayer(ps, rng, name + ".v", d, d);
  out = LinearLayer(ps, rng, name + ".out", d, d);
}

Tensor MultiHeadSelfAttention::operator()(const Tensor& tokens) const {
  if (tokens.ndim() != 2 || tokens.dim(1) != cfg.embed_dim())
    throw ShapeError(cat("attention: tokens ", shape_str(tokens.shape()), " incompatible with D=",
                         cfg.embed_dim()));
  Tensor Q = q(tokens), K = k(tokens), V = v(tokens);
  double scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
  std::vector<Tensor> heads;
  heads.reserve(static_cast<size_t>(cfg.n_heads));
  for (int h = 0; h < cfg.n_heads; ++h) {
    int c0 = h * cfg.head_dim, c1 = (h + 1) * cfg.head_dim;
    Tensor qh = op::cols(Q, c0, c1), kh = op::cols(K, c0, c1), vh = op::cols(V, c0, c1);
    Tensor rows = op::softmax_rows(op::mul_scalar(op::matmul_nt(qh, kh), scale));
    heads.push_back(op::matmul(rows, vh));
  }
  return out(op::concat_cols(heads));
}

std::vector<Tensor> MultiHeadSelfAttention::attention_rows(const Tensor& tokens) const {
  Tensor Q = q(tokens), K = k(tokens);
  double scale = 1.0 / std::sqrt(static_cast<double>(cfg.head_dim));
  std::vector<Tensor> rows;
  for (int h = 0; h < cfg.n_heads; ++h) {
    int c0 = h * cfg.head_dim, c1 = (h + 1) * cfg.head_dim;
    rows.push_back(op::softmax_rows(
        op::mul_scalar(op::matmul_nt(op::cols(Q, c0, c1), op::cols(K, c0, c1)), scale)));
  }
  return rows;
}

TransformerBlock::TransformerBlock(ParamStore& ps, Rng& rng, const std::string& name,
                                   const AttentionConfig& cfg) {
  int d = cfg.embed_dim();
  ln1 = LayerNormLayer(ps, name + ".ln1", d);
  ln2 = LayerNormLayer(ps, name + ".ln2", d);
  attn = MultiHeadSelfAttention(ps, rng, name + ".attn", cfg);
  fc1 = LinearLayer(ps, rng, name + ".mlp.fc1", d, cfg.mlp_dim);
  fc2 = LinearLayer(ps, rng, name + ".mlp.fc2", cfg.mlp_dim, d);
}

Tensor TransformerBlock::operator()(const Tensor& tokens, double dropout, Rng* drop_rng) const {
  Tensor x = op::add(tokens, attn(ln1(tokens)));
  Tensor m = fc2(op::gelu(fc1(ln2(x))));
  if (dropout > 0.0 && drop_rng) m = op::dropout(m, dropout, *drop_rng);
  return op::add(x, m);
}

SemanticEncoder::SemanticEncoder(ParamStore& ps, Rng& rng, const ModelConfig& cfg) : cfg_(cfg) {
  int in_ch = cfg.in_channels;
  for (int s = 0; s < cfg.backbone_stages; ++s) {
    int out_ch = cfg.backbone_base << s;
    stage_convs_.emplace_back(ps, rng, cat("semantic.backbone.", s, ".conv"), in_ch, out_ch, 3, 2, 1);
    stage_norms_.emplace_back(ps, cat("semantic.backbone.", s, ".norm"), out_ch, norm_groups(out_ch));
    in_ch = out_ch;
  }
  grid_ = cfg.input_size / cfg.backbone_stride();
  patch_grid_ = grid_ / cfg.patch_size;
  int n_tokens = patch_grid_ * patch_grid_;
  patch_conv_ = Conv2dLayer(ps, rng, "semantic.patch", in_ch, cfg.embed_dim, cfg.patch_size,
                            cfg.patch_size, 0);
  pos_ = ps.add("semantic.pos", {n_tokens, cfg.embed_dim},
                std::vector<double>(static_cast<size_t>(n_tokens) * cfg.embed_dim, 0.0));
  AttentionConfig ac;
  ac.n_layers = cfg.depth;
  ac.n_heads = cfg.n_heads;
  ac.head_dim = cfg.head_dim();
  ac.mlp_dim = cfg.mlp_dim;
  ac.dropout = cfg.dropout;
  for (int l = 0; l < cfg.depth; ++l)
    blocks_.emplace_back(ps, rng, cat("semantic.tf.", l), ac);

  out_channels_ = cfg.backbone_base << (cfg.backbone_stages - 1);
  int hc_in = cfg.embed_dim;
  for (int i = 0; i < 3; ++i) {
    int hc_out = out_channels_;
    head_convs_.emplace_back(ps, rng, cat("semantic.head.", i, ".conv"), hc_in, hc_out, 3, 1, 1);
    head_norms_.emplace_back(ps, cat("semantic.head.", i, ".norm"), hc_out, norm_groups(hc_out));
    hc_in = hc_out;
  }
}

Tensor SemanticEncoder::embed_patches(const Tensor& fm) const {
  if (fm.ndim() != 3) throw ShapeError("embed_patches: expected [C,h,w] feature map");
  int P = cfg_.patch_size;
  if (fm.dim(1) % P != 0 || fm.dim(2) % P != 0)
    throw ShapeError(cat("embed_patches: map ", fm.dim(1), "x", fm.dim(2),
                         " not divisible by patch size ", P, "; pad to ",
                         ((fm.dim(1) + P - 1) / P) * P, "x", ((fm.dim(2) + P - 1) / P) * P));
  Tensor grid = patch_conv_(fm);  // [D, h', w']
  Tensor tokens = op::chw_to_tokens(grid);
  if (tokens.dim(0) != pos_.dim(0))
    throw ShapeError(cat("embed_patches: ", tokens.dim(0), " tokens vs position table of ",
                         pos_.dim(0)));
  return op::add(tokens, pos_);
}

SemanticEncoder::Output SemanticEncoder::forward(const Tensor& image, Rng* drop_rng) const {
  if (image.ndim() != 3 || image.dim(0) != cfg_.in_channels || image.dim(1) != cfg_.input_size ||
      image.dim(2) != cfg_.input_size)
    throw ShapeError(cat("semantic encoder: input ", shape_str(image.shape()),
                         " does not match configured ", cfg_.in_channels, "x", cfg_.input_size,
                         "x", cfg_.input_size));
  Output out;
  Tensor x = image;
  for (size_t s = 0; s < stage_convs_.size(); ++s) {
    x = op::silu(stage_norms_[s](stage_convs_[s](x)));
    out.skips.push_back(x);
  }
  Tensor tokens = embed_patches(x);
  for (const auto& blk : blocks_) tokens = blk(tokens, cfg_.dropout, drop_rng);
  Tensor grid = op::tokens_to_chw(tokens, patch_grid_, patch_grid_);
  if (cfg_.patch_size > 1) grid = op::upsample_bilinear(grid, grid_, grid_);
  for (size_t i = 0; i < head_convs_.size(); ++i)
    grid = op::silu(head_norms_[i](head_convs_[i](grid)));
  out.semantic_fm = grid;
  return out;
}

}  // namespace fusionseg
