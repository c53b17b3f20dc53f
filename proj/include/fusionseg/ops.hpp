#pragma once

#include <vector>

#include "fusionseg/rng.hpp"
#include "fusionseg/tensor.hpp"

namespace fusionseg {
namespace ops {

// ---- elementwise ----
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor add_scalar(const Tensor& a, double c);
Tensor mul_scalar(const Tensor& a, double c);
Tensor abs(const Tensor& a);
Tensor clamp(const Tensor& a, double lo, double hi);
Tensor relu(const Tensor& a);
Tensor silu(const Tensor& a);
Tensor gelu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor log(const Tensor& a);

// ---- reductions ----
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

// ---- shape ----
Tensor reshape(const Tensor& a, Shape s);
Tensor concat_channels(const std::vector<Tensor>& xs);        // [Ci,H,W] -> [ΣCi,H,W]
Tensor slice_channels(const Tensor& a, int c0, int c1);       // [C,H,W] -> [c1-c0,H,W]
Tensor chw_to_tokens(const Tensor& a);                        // [C,h,w] -> [h*w,C]
Tensor tokens_to_chw(const Tensor& a, int h, int w);          // [N,C] -> [C,h,w]
Tensor cols(const Tensor& a, int c0, int c1);                 // [N,D] -> [N,c1-c0]
Tensor concat_cols(const std::vector<Tensor>& xs);            // [N,Di] -> [N,ΣDi]

// ---- linear algebra ----
Tensor matmul(const Tensor& a, const Tensor& b);     // [M,K]x[K,N]
Tensor matmul_nt(const Tensor& a, const Tensor& b);  // [M,K]x[N,K]^T -> [M,N]
Tensor add_rows(const Tensor& x, const Tensor& b);   // [N,D] + [D]

// ---- neural net ----
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad);
Tensor max_pool2x2(const Tensor& x);
Tensor avg_pool(const Tensor& x, int k);  // non-overlapping kxk, floor output
Tensor upsample_bilinear(const Tensor& x, int oh, int ow);
Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups,
                  double eps = 1e-5);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps = 1e-5);
Tensor softmax_rows(const Tensor& x);      // [N,M], softmax over M
Tensor softmax_channels(const Tensor& x);  // [K,H,W], softmax over K per pixel
Tensor scale_channels(const Tensor& x, const Tensor& s);  // x[C,H,W] * s[C]
Tensor mul_spatial(const Tensor& x, const Tensor& a);     // x[C,H,W] * a[1,H,W]
Tensor global_avg_channels(const Tensor& x);              // [C,H,W] -> [C]
Tensor dropout(const Tensor& x, double rate, Rng& rng);
Tensor sum_channel_range(const Tensor& x, int c0, int c1);  // [K,H,W] -> [1,H,W]

// ---- fused losses ----
Tensor cross_entropy_channels(const Tensor& logits, const std::vector<int>& labels);
Tensor bce_mean(const Tensor& pred, const std::vector<double>& target, double clamp_eps = 1e-7);
// Mean per-pixel KL(teacher || student) with both distributions softened by
// temperature; teacher_probs must already be the softened distribution.
Tensor kl_channels(const Tensor& student_logits, const std::vector<double>& teacher_probs,
                   double temperature);

}  // namespace ops
}  // namespace fusionseg
