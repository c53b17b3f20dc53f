#pragma once

#include <vector>

#include "fusionseg/config.hpp"
#include "fusionseg/nn.hpp"

namespace fusionseg {

struct AttentionConfig {
  int n_layers = 12;
  int n_heads = 4;
  int head_dim = 16;
  int mlp_dim = 128;
  double dropout = 0.0;

  int embed_dim() const { return n_heads * head_dim; }
  void validate() const {
    if (n_layers < 1) throw ConfigError("attention: n_layers must be >= 1");
    if (n_heads < 1 || head_dim < 1) throw ConfigError("attention: heads and head_dim must be >= 1");
  }
};

// Scaled dot-product attention over all tokens, h heads in parallel, then a
// linear output projection. Softmax logits carry the 1/sqrt(head_dim) factor.
struct MultiHeadSelfAttention {
  LinearLayer q, k, v, out;
  AttentionConfig cfg;

  MultiHeadSelfAttention() = default;
  MultiHeadSelfAttention(ParamStore& ps, Rng& rng, const std::string& name,
                         const AttentionConfig& cfg);
  Tensor operator()(const Tensor& tokens) const;
  // Per-head attention rows for the given input (softmax outputs), for tests.
  std::vector<Tensor> attention_rows(const Tensor& tokens) const;
};

// Pre-norm block: x + attn(ln(x)); x + mlp(ln(x)).
struct TransformerBlock {
  LayerNormLayer ln1, ln2;
  MultiHeadSelfAttention attn;
  LinearLayer fc1, fc2;

  TransformerBlock() = default;
  TransformerBlock(ParamStore& ps, Rng& rng, const std::string& name, const AttentionConfig& cfg);
  Tensor operator()(const Tensor& tokens, double dropout, Rng* drop_rng) const;
};

// CNN backbone embedding -> patch tokens + learned positions -> transformer
// stack -> three-conv head back at the backbone grid.
class SemanticEncoder {
 public:
  SemanticEncoder() = default;
  SemanticEncoder(ParamStore& ps, Rng& rng, const ModelConfig& cfg);

  struct Output {
    Tensor semantic_fm;         // [out_channels, S/stride, S/stride]
    std::vector<Tensor> skips;  // one per backbone stage, shallow -> deep
  };
  Output forward(const Tensor& image, Rng* drop_rng = nullptr) const;

  // Patch tokens for a backbone feature map: strided PxP convolution plus the
  // learned position table.
  Tensor embed_patches(const Tensor& fm) const;

  int out_channels() const { return out_channels_; }
  const std::vector<TransformerBlock>& blocks() const { return blocks_; }
  const Tensor& position_table() const { return pos_; }

 private:
  ModelConfig cfg_;
  std::vector<Conv2dLayer> stage_convs_;
  std::vector<GroupNormLayer> stage_norms_;
  Conv2dLayer patch_conv_;
  Tensor pos_;  // [N, D]
  std::vector<TransformerBlock> blocks_;
  std::vector<Conv2dLayer> head_convs_;
  std::vector<GroupNormLayer> head_norms_;
  int out_channels_ = 0;
  int grid_ = 0;       // backbone grid size
  int patch_grid_ = 0; // grid_ / patch_size
};

}  // namespace fusionseg
