#include "fusionseg/ops.hpp"

#include <algorithm>
#include <cmath>

namespace fusionseg {
namespace ops {

namespace {

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw ShapeError(cat(op, ": shape mismatch ", shape_str(a.shape()), " vs ", shape_str(b.shape())));
}

void check_ndim(const Tensor& a, int nd, const char* op) {
  if (a.ndim() != nd)
    throw ShapeError(cat(op, ": expected ", nd, "-d tensor, got ", shape_str(a.shape())));
}

void axpy(std::vector<double>& acc, const std::vector<double>& g, const double* scale_each = nullptr) {
  (void)scale_each;
  for (size_t i = 0; i < acc.size(); ++i) acc[i] += g[i];
}

// Unary elementwise with derivative expressed from input value.
template <typename F, typename DF>
Tensor unary(const Tensor& a, F f, DF df) {
  std::vector<double> v(a.values().size());
  const double* x = a.data();
  for (size_t i = 0; i < v.size(); ++i) v[i] = f(x[i]);
  return make_op(a.shape(), std::move(v), {a},
                 [df](Node& self, const std::vector<double>& g, Gradients& gs) {
                   Node* p = self.parents[0].get();
                   auto& pg = gs.buf(p);
                   const double* x = p->value.data();
                   for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * df(x[i]);
                 });
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "add");
  std::vector<double> v(a.values().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] + b.data()[i];
  return make_op(a.shape(), std::move(v), {a, b},
                 [](Node& self, const std::vector<double>& g, Gradients& gs) {
                   for (auto& p : self.parents)
                     if (p->requires_grad) axpy(gs.buf(p.get()), g);
                 });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "sub");
  std::vector<double> v(a.values().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] - b.data()[i];
  return make_op(a.shape(), std::move(v), {a, b},
                 [](Node& self, const std::vector<double>& g, Gradients& gs) {
                   if (self.parents[0]->requires_grad) axpy(gs.buf(self.parents[0].get()), g);
                   if (self.parents[1]->requires_grad) {
                     auto& pg = gs.buf(self.parents[1].get());
                     for (size_t i = 0; i < g.size(); ++i) pg[i] -= g[i];
                   }
                 });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "mul");
  std::vector<double> v(a.values().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] * b.data()[i];
  return make_op(a.shape(), std::move(v), {a, b},
                 [](Node& self, const std::vector<double>& g, Gradients& gs) {
                   Node* pa = self.parents[0].get();
                   Node* pb = self.parents[1].get();
                   if (pa->requires_grad) {
                     auto& ga = gs.buf(pa);
                     for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * pb->value[i];
                   }
                   if (pb->requires_grad) {
                     auto& gb = gs.buf(pb);
                     for (size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * pa->value[i];
                   }
                 });
}

Tensor div(const Tensor& a, const Tensor& b) {
  check_same_shape(a, b, "div");
  std::vector<double> v(a.values().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = a.data()[i] / b.data()[i];
  return make_op(a.shape(), std::move(v), {a, b},
                 [](Node& self, const std::vector<double>& g, Gradients& gs) {
                   Node* pa = self.parents[0].get();
                   Node* pb = self.parents[1].get();
                   if (pa->requires_grad) {
                     auto& ga = gs.buf(pa);
                     for (size_t i = 0; i < g.size(); ++i) ga[i] += g[i] / pb->value[i];
                   }
                   if (pb->requires_grad) {
                     auto& gb = gs.buf(pb);
                     for (size_t i = 0; i < g.size(); ++i)
                       gb[i] -= g[i] * pa->value[i] / (pb->value[i] * pb->value[i]);
                   }
                 });
}

Tensor add_scalar(const Tensor& a, double c) {
  return unary(a, [c](double x) { return x + c; }, [](double) { return 1.0; });
}

Tensor mul_scalar(const Tensor& a, double c) {
  return unary(a, [c](double x) { return x * c; }, [c](double) { return c; });
}

Tensor abs(const Tensor& a) {
  // Subgradient 0 at the kink.
  return unary(a, [](double x) { return std::fabs(x); },
               [](double x) { return x > 0 ? 1.0 : (x < 0 ? -1.0 : 0.0); });
}

Tensor clamp(const Tensor& a, double lo, double hi) {
  return unary(a, [lo, hi](double x) { return std::min(std::max(x, lo), hi); },
               [lo, hi](double x) { return (x >= lo && x <= hi) ? 1.0 : 0.0; });
}

Tensor relu(const Tensor& a) {
  return unary(a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x) { return x > 0 ? 1.0 : 0.0; });
}

Tensor silu(const Tensor& a) {
  return unary(a,
               [](double x) { return x / (1.0 + std::exp(-x)); },
               [](double x) {
                 double s = 1.0 / (1.0 + std::exp(-x));
                 return s * (1.0 + x * (1.0 - s));
               });
}

Tensor gelu(const Tensor& a) {
  constexpr double kInvSqrt2 = 0.70710678118654752440;
  constexpr double kInvSqrt2Pi = 0.39894228040143267794;
  return unary(a,
               [](double x) { return 0.5 * x * (1.0 + std::erf(x * kInvSqrt2)); },
               [](double x) {
                 return 0.5 * (1.0 + std::erf(x * kInvSqrt2)) +
                        x * kInvSqrt2Pi * std::exp(-0.5 * x * x);
               });
}

Tensor sigmoid(const Tensor& a) {
  return unary(a,
               [](double x) { return 1.0 / (1.0 + std::exp(-x)); },
               [](double x) {
                 double s = 1.0 / (1.0 + std::exp(-x));
                 return s * (1.0 - s);
               });
}

Tensor log(const Tensor& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x) { return 1.0 / x; });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  return make_op({1}, {s}, {a}, [](Node& self, const std::vector<double>& g, Gradients& gs) {
    auto& pg = gs.buf(self.parents[0].get());
    for (double& v : pg) v += g[0];
  });
}

Tensor mean(const Tensor& a) {
  double s = 0.0;
  for (double x : a.values()) s += x;
  double inv = 1.0 / static_cast<double>(a.values().size());
  return make_op({1}, {s * inv}, {a},
                 [inv](Node& self, const std::vector<double>& g, Gradients& gs) {
                   auto& pg = gs.buf(self.parents[0].get());
                   double gi = g[0] * inv;
                   for (double& v : pg) v += gi;
                 });
}

Tensor reshape(const Tensor& a, Shape s) {
  if (numel(s) != static_cast<int64_t>(a.values().size()))
    throw ShapeError(cat("reshape: ", shape_str(a.shape()), " to ", shape_str(s)));
  return make_op(std::move(s), a.values(), {a},
                 [](Node& self, const std::vector<double>& g, Gradients& gs) {
                   axpy(gs.buf(self.parents[0].get()), g);
                 });
}

Tensor concat_channels(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_channels: empty input list");
  int H = xs[0].dim(1), W = xs[0].dim(2), C = 0;
  for (const auto& x : xs) {
    check_ndim(x, 3, "concat_channels");
    if (x.dim(1) != H || x.dim(2) != W)
      throw ShapeError(cat("concat_channels: spatial mismatch ", shape_str(x.shape())));
    C += x.dim(0);
  }
  std::vector<double> v;
  v.reserve(static_cast<size_t>(C) * H * W);
  for (const auto& x : xs) v.insert(v.end(), x.values().begin(), x.values().end());
  return make_op({C, H, W}, std::move(v), xs,
                 [](Node& self, const std::vector<double>& g, Gradients& gs) {
                   size_t off = 0;
                   for (auto& p : self.parents) {
                     size_t n = p->value.size();
                     if (p->requires_grad) {
                       auto& pg = gs.buf(p.get());
                       for (size_t i = 0; i < n; ++i) pg[i] += g[off + i];
                     }
                     off += n;
                   }
                 });
}

Tensor slice_channels(const Tensor& a, int c0, int c1) {
  check_ndim(a, 3, "slice_channels");
  if (c0 < 0 || c1 > a.dim(0) || c0 >= c1)
    throw ShapeError(cat("slice_channels: [", c0, ",", c1, ") of ", shape_str(a.shape())));
  int H = a.dim(1), W = a.dim(2);
  size_t plane = static_cast<size_t>(H) * W;
  std::vector<double> v(a.values().begin() + c0 * plane, a.values().begin() + c1 * plane);
  return make_op({c1 - c0, H, W}, std::move(v), {a},
                 [c0, plane](Node& self, const std::vector<double>& g, Gradients& gs) {
                   auto& pg = gs.buf(self.parents[0].get());
                   size_t off = c0 * plane;
                   for (size_t i = 0; i < g.size(); ++i) pg[off + i] += g[i];
                 });
}

Tensor chw_to_tokens(const Tensor& a) {
  check_ndim(a, 3, "chw_to_tokens");
  int C = a.dim(0), h = a.dim(1), w = a.dim(2);
  int N = h * w;
  std::vector<double> v(static_cast<size_t>(N) * C);
  const double* x = a.data();
  for (int c = 0; c < C; ++c)
    for (int n = 0; n < N; ++n) v[static_cast<size_t>(n) * C + c] = x[static_cast<size_t>(c) * N + n];
  return make_op({N, C}, std::move(v), {a},
                 [C, N](Node& self, const std::vector<double>& g, Gradients& gs) {
                   auto& pg = gs.buf(self.parents[0].get());
                   for (int c = 0; c < C; ++c)
                     for (int n = 0; n < N; ++n)
                       pg[static_cast<size_t>(c) * N + n] += g[static_cast<size_t>(n) * C + c];
                 });
}

Tensor tokens_to_chw(const Tensor& a, int h, int w) {
  check_ndim(a, 2, "tokens_to_chw");
  int N = a.dim(0), C = a.dim(1);
  if (N != h * w) throw ShapeError(cat("tokens_to_chw: ", N, " tokens for ", h, "x", w, " grid"));
  std::vector<double> v(static_cast<size_t>(C) * N);
  const double* x = a.data();
  for (int n = 0; n < N; ++n)
    for (int c = 0; c < C; ++c) v[static_cast<size_t>(c) * N + n] = x[static_cast<size_t>(n) * C + c];
  return make_op({C, h, w}, std::move(v), {a},
                 [C, N](Node& self, const std::vector<double>& g, Gradients& gs) {
                   auto& pg = gs.buf(self.parents[0].get());
                   for (int n = 0; n < N; ++n)
                     for (int c = 0; c < C; ++c)
                       pg[static_cast<size_t>(n) * C + c] += g[static_cast<size_t>(c) * N + n];
                 });
}

Tensor cols(const Tensor& a, int c0, int c1) {
  check_ndim(a, 2, "cols");
  int N = a.dim(0), D = a.dim(1);
  if (c0 < 0 || c1 > D || c0 >= c1) throw ShapeError(cat("cols: [", c0, ",", c1, ") of D=", D));
  int M = c1 - c0;
  std::vector<double> v(static_cast<size_t>(N) * M);
  const double* x = a.data();
  for (int n = 0; n < N; ++n)
    for (int m = 0; m < M; ++m) v[static_cast<size_t>(n) * M + m] = x[static_cast<size_t>(n) * D + c0 + m];
  return make_op({N, M}, std::move(v), {a},
                 [N, D, M, c0](Node& self, const std::vector<double>& g, Gradients& gs) {
                   auto& pg = gs.buf(self.parents[0].get());
                   for (int n = 0; n < N; ++n)
                     for (int m = 0; m < M; ++m)
                       pg[static_cast<size_t>(n) * D + c0 + m] += g[static_cast<size_t>(n) * M + m];
                 });
}

Tensor concat_cols(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_cols: empty input list");
  int N = xs[0].dim(0), D = 0;
  for (const auto& x : xs) {
    check_ndim(x, 2, "concat_cols");
    if (x.dim(0) != N) throw ShapeError("concat_cols: row mismatch");
    D += x.dim(1);
  }
  std::vector<double> v(static_cast<size_t>(N) * D);
  int off = 0;
  for (const auto& x : xs) {
    int d = x.dim(1);
    for (int n = 0; n < N; ++n)
      for (int j = 0; j < d; ++j)
        v[static_cast<size_t>(n) * D + off + j] = x.data()[static_cast<size_t>(n) * d + j];
    off += d;
  }
  return make_op({N, D}, std::move(v), xs,
                 [N, D](Node& self, const std::vector<double>& g, Gradients& gs) {
                   int off = 0;
                   for (auto& p : self.parents) {
                     int d = p->shape[1];
                     if (p->requires_grad) {
                       auto& pg = gs.buf(p.get());
                       for (int n = 0; n < N; ++n)
                         for (int j = 0; j < d; ++j)
                           pg[static_cast<size_t>(n) * d + j] += g[static_cast<size_t>(n) * D + off + j];
                     }
                     off += d;
                   }
                 });
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  check_ndim(a, 2, "matmul");
  check_ndim(b, 2, "matmul");
  int M = a.dim(0), K = a.dim(1), K2 = b.dim(0), N = b.dim(1);
  if (K != K2)
    throw ShapeError(cat("matmul: ", shape_str(a.shape()), " x ", shape_str(b.shape())));
  std::vector<double> v(static_cast<size_t>(M) * N, 0.0);
  const double* A = a.data();
  const double* B = b.data();
  for (int i = 0; i < M; ++i)
    for (int k = 0; k < K; ++k) {
      double av = A[static_cast<size_t>(i) * K + k];
      const double* brow = B + static_cast<size_t>(k) * N;
      double* vrow = v.data() + static_cast<size_t>(i) * N;
      for (int j = 0; j < N; ++j) vrow[j] += av * brow[j];
    }
  return make_op({M, N}, std::move(v), {a, b},
                 [M, K, N](Node& self, const std::vector<double>& g, Gradients& gs) {
                   Node* pa = self.parents[0].get();
                   Node* pb = self.parents[1].get();
                   if (pa->requires_grad) {  // dA = G B^T
                     auto& ga = gs.buf(pa);
                     const double* B = pb->value.data();
                     for (int i = 0; i < M; ++i) {
                       const double* grow = g.data() + static_cast<size_t>(i) * N;
                       double* garow = ga.data() + static_cast<size_t>(i) * K;
                       for (int k = 0; k < K; ++k) {
                         const double* brow = B + static_cast<size_t>(k) * N;
                         double acc = 0.0;
                         for (int j = 0; j < N; ++j) acc += grow[j] * brow[j];
                         garow[k] += acc;
                       }
                     }
                   }
                   if (pb->requires_grad) {  // dB = A^T G
                     auto& gb = gs.buf(pb);
                     const double* A = pa->value.data();
                     for (int i = 0; i < M; ++i)
                       for (int k = 0; k < K; ++k) {
                         double av = A[static_cast<size_t>(i) * K + k];
                         const double* grow = g.data() + static_cast<size_t>(i) * N;
                         double* gbrow = gb.data() + static_cast<size_t>(k) * N;
                         for (int j = 0; j < N; ++j) gbrow[j] += av * grow[j];
                       }
                   }
                 });
}

Tensor matmul_nt(const Tensor& a, const Tensor& b) {
  check_ndim(a, 2, "matmul_nt");
  check_ndim(b, 2, "matmul_nt");
  int M = a.dim(0), K = a.dim(1), N = b.dim(0);
  if (K != b.dim(1))
    throw ShapeError(cat("matmul_nt: ", shape_str(a.shape()), " x ", shape_str(b.shape()), "^T"));
  std::vector<double> v(static_cast<size_t>(M) * N, 0.0);
  const double* A = a.data();
  const double* B = b.data();
  for (int i = 0; i < M; ++i)
    for (int j = 0; j < N; ++j) {
      const double* arow = A + static_cast<size_t>(i) * K;
      const double* brow = B + static_cast<size_t>(j) * K;
      double acc = 0.0;
      for (int k = 0; k < K; ++k) acc += arow[k] * brow[k];
      v[static_cast<size_t>(i) * N + j] = acc;
    }
  return make_op({M, N}, std::move(v), {a, b},
                 [M, K, N](Node& self, const std::vector<double>& g, Gradients& gs) {
                   Node* pa = self.parents[0].get();
                   Node* pb = self.parents[1].get();
                   if (pa->requires_grad) {  // dA = G B
                     auto& ga = gs.buf(pa);
                     const double* B = pb->value.data();
                     for (int i = 0; i < M; ++i)
                       for (int j = 0; j < N; ++j) {
                         double gv = g[static_cast<size_t>(i) * N + j];
                         const double* brow = B + static_cast<size_t>(j) * K;
                         double* garow = ga.data() + static_cast<size_t>(i) * K;
                         for (int k = 0; k < K; ++k) garow[k] += gv * brow[k];
                       }
                   }
                   if (pb->requires_grad) {  // dB = G^T A
                     auto& gb = gs.buf(pb);
                     const double* A = pa->value.data();
                     for (int i = 0; i < M; ++i)
                       for (int j = 0; j < N; ++j) {
                         double gv = g[static_cast<size_t>(i) * N + j];
                         const double* arow = A + static_cast<size_t>(i) * K;
                         double* gbrow = gb.data() + static_cast<size_t>(j) * K;
                         for (int k = 0; k < K; ++k) gbrow[k] += gv * arow[k];
                       }
                   }
                 });
}

Tensor add_rows(const Tensor& x, const Tensor& b) {
  check_ndim(x, 2, "add_rows");
  check_ndim(b, 1, "add_rows");
  int N = x.dim(0), D = x.dim(1);
  if (b.dim(0) != D) throw ShapeError(cat("add_rows: bias ", b.dim(0), " for D=", D));
  std::vector<double> v(x.values());
  for (int n = 0; n < N; ++n)
    for (int j = 0; j < D; ++j) v[static_cast<size_t>(n) * D + j] += b.data()[j];
  return make_op({N, D}, std::move(v), {x, b},
                 [N, D](Node& self, const std::vector<double>& g, Gradients& gs) {
                   if (self.parents[0]->requires_grad) axpy(gs.buf(self.parents[0].get()), g);
                   if (self.parents[1]->requires_grad) {
                     auto& gb = gs.buf(self.parents[1].get());
                     for (int n = 0; n < N; ++n)
                       for (int j = 0; j < D; ++j) gb[j] += g[static_cast<size_t>(n) * D + j];
                   }
                 });
}

// Direct convolution over a zero-padded copy of the input; the kernel-major
// loop order keeps the inner loop contiguous in both the source row and the
// output row.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride, int pad) {
  check_ndim(x, 3, "conv2d");
  if (w.ndim() != 4) throw ShapeError(cat("conv2d: weight must be 4-d, got ", shape_str(w.shape())));
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  int O = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != C)
    throw ShapeError(cat("conv2d: input has ", C, " channels, weight expects ", w.dim(1)));
  if (b.defined() && (b.ndim() != 1 || b.dim(0) != O))
    throw ShapeError("conv2d: bias shape mismatch");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  int Hp = H + 2 * pad, Wp = W + 2 * pad;
  int Ho = (Hp - kh) / stride + 1;
  int Wo = (Wp - kw) / stride + 1;
  if (Ho < 1 || Wo < 1)
    throw ShapeError(cat("conv2d: output would be ", Ho, "x", Wo, " for input ", H, "x", W,
                         ", kernel ", kh, "x", kw, ", stride ", stride, ", pad ", pad));

  auto xpad = std::make_shared<std::vector<double>>(static_cast<size_t>(C) * Hp * Wp, 0.0);
  {
    const double* src = x.data();
    for (int c = 0; c < C; ++c)
      for (int y = 0; y < H; ++y) {
        double* dst = xpad->data() + (static_cast<size_t>(c) * Hp + y + pad) * Wp + pad;
        const double* s = src + (static_cast<size_t>(c) * H + y) * W;
        std::copy(s, s + W, dst);
      }
  }

  std::vector<double> out(static_cast<size_t>(O) * Ho * Wo, 0.0);
  if (b.defined()) {
    for (int o = 0; o < O; ++o)
      std::fill_n(out.begin() + static_cast<size_t>(o) * Ho * Wo, static_cast<size_t>(Ho) * Wo,
                  b.data()[o]);
  }
  const double* wv = w.data();
  for (int o = 0; o < O; ++o) {
    double* oplane = out.data() + static_cast<size_t>(o) * Ho * Wo;
    for (int c = 0; c < C; ++c) {
      const double* cplane = xpad->data() + static_cast<size_t>(c) * Hp * Wp;
      for (int ky = 0; ky < kh; ++ky)
        for (int kx = 0; kx < kw; ++kx) {
          double wval = wv[((static_cast<size_t>(o) * C + c) * kh + ky) * kw + kx];
          if (wval == 0.0) continue;
          for (int y = 0; y < Ho; ++y) {
            const double* srow = cplane + static_cast<size_t>(y * stride + ky) * Wp + kx;
            double* orow = oplane + static_cast<size_t>(y) * Wo;
            if (stride == 1) {
              for (int xps = 0; xps < Wo; ++xps) orow[xps] += wval * srow[xps];
            } else {
              for (int xps = 0; xps < Wo; ++xps) orow[xps] += wval * srow[static_cast<size_t>(xps) * stride];
            }
          }
        }
    }
  }

  std::vector<Tensor> parents = b.defined() ? std::vector<Tensor>{x, w, b} : std::vector<Tensor>{x, w};
  return make_op(
      {O, Ho, Wo}, std::move(out), std::move(parents),
      [C, H, W, O, kh, kw, stride, pad, Hp, Wp, Ho, Wo, xpad](Node& self, const std::vector<double>& g,
                                                              Gradients& gs) {
        Node* px = self.parents[0].get();
        Node* pw = self.parents[1].get();
        Node* pb = self.parents.size() > 2 ? self.parents[2].get() : nullptr;
        const double* wv = pw->value.data();

        if (pb && pb->requires_grad) {
          auto& gb = gs.buf(pb);
          for (int o = 0; o < O; ++o) {
            const double* gp = g.data() + static_cast<size_t>(o) * Ho * Wo;
            double acc = 0.0;
            for (int i = 0; i < Ho * Wo; ++i) acc += gp[i];
            gb[o] += acc;
          }
        }
        if (pw->requires_grad) {
          auto& gw = gs.buf(pw);
          for (int o = 0; o < O; ++o) {
            const double* gplane = g.data() + static_cast<size_t>(o) * Ho * Wo;
            for (int c = 0; c < C; ++c) {
              const double* cplane = xpad->data() + static_cast<size_t>(c) * Hp * Wp;
              for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                  double acc = 0.0;
                  for (int y = 0; y < Ho; ++y) {
                    const double* srow = cplane + static_cast<size_t>(y * stride + ky) * Wp + kx;
                    const double* grow = gplane + static_cast<size_t>(y) * Wo;
                    if (stride == 1) {
                      for (int xps = 0; xps < Wo; ++xps) acc += grow[xps] * srow[xps];
                    } else {
                      for (int xps = 0; xps < Wo; ++xps)
                        acc += grow[xps] * srow[static_cast<size_t>(xps) * stride];
                    }
                  }
                  gw[((static_cast<size_t>(o) * C + c) * kh + ky) * kw + kx] += acc;
                }
            }
          }
        }
        if (px->requires_grad) {
          std::vector<double> gxp(static_cast<size_t>(C) * Hp * Wp, 0.0);
          for (int o = 0; o < O; ++o) {
            const double* gplane = g.data() + static_cast<size_t>(o) * Ho * Wo;
            for (int c = 0; c < C; ++c) {
              double* cplane = gxp.data() + static_cast<size_t>(c) * Hp * Wp;
              for (int ky = 0; ky < kh; ++ky)
                for (int kx = 0; kx < kw; ++kx) {
                  double wval = wv[((static_cast<size_t>(o) * C + c) * kh + ky) * kw + kx];
                  if (wval == 0.0) continue;
                  for (int y = 0; y < Ho; ++y) {
                    double* srow = cplane + static_cast<size_t>(y * stride + ky) * Wp + kx;
                    const double* grow = gplane + static_cast<size_t>(y) * Wo;
                    if (stride == 1) {
                      for (int xps = 0; xps < Wo; ++xps) srow[xps] += wval * grow[xps];
                    } else {
                      for (int xps = 0; xps < Wo; ++xps)
                        srow[static_cast<size_t>(xps) * stride] += wval * grow[xps];
                    }
                  }
                }
            }
          }
          auto& gx = gs.buf(px);
          for (int c = 0; c < C; ++c)
            for (int y = 0; y < H; ++y) {
              const double* s = gxp.data() + (static_cast<size_t>(c) * Hp + y + pad) * Wp + pad;
              double* d = gx.data() + (static_cast<size_t>(c) * H + y) * W;
              for (int xps = 0; xps < W; ++xps) d[xps] += s[xps];
            }
        }
      });
}

Tensor max_pool2x2(const Tensor& x) {
  check_ndim(x, 3, "max_pool2x2");
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  int Ho = H / 2, Wo = W / 2;
  if (Ho < 1 || Wo < 1)
    throw ShapeError(cat("max_pool2x2: input ", H, "x", W, " too small to pool (minimum 2x2)"));
  std::vector<double> v(static_cast<size_t>(C) * Ho * Wo);
  auto arg = std::make_shared<std::vector<int64_t>>(v.size());
  const double* src = x.data();
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Ho; ++y)
      for (int xo = 0; xo < Wo; ++xo) {
        int64_t base = (static_cast<int64_t>(c) * H + 2 * y) * W + 2 * xo;
        int64_t best = base;
        double bv = src[base];
        const int64_t cand[3] = {base + 1, base + W, base + W + 1};
        for (int64_t idx : cand)
          if (src[idx] > bv) {
            bv = src[idx];
            best = idx;
          }
        size_t oi = (static_cast<size_t>(c) * Ho + y) * Wo + xo;
        v[oi] = bv;
        (*arg)[oi] = best;
      }
  return make_op({C, Ho, Wo}, std::move(v), {x},
                 [arg](Node& self, const std::vector<double>& g, Gradients& gs) {
                   auto& pg = gs.buf(self.parents[0].get());
                   for (size_t i = 0; i < g.size(); ++i) pg[static_cast<size_t>((*arg)[i])] += g[i];
                 });
}

Tensor avg_pool(const Tensor& x, int k) {
  check_ndim(x, 3, "avg_pool");
  if (k < 1) throw ShapeError("avg_pool: k must be >= 1");
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  int Ho = H / k, Wo = W / k;
  if (Ho < 1 || Wo < 1) throw ShapeError(cat("avg_pool: input ", H, "x", W, " smaller than window ", k));
  std::vector<double> v(static_cast<size_t>(C) * Ho * Wo, 0.0);
  const double* src = x.data();
  double inv = 1.0 / (static_cast<double>(k) * k);
  for (int c = 0; c < C; ++c)
    for (int y = 0; y < Ho; ++y)
      for (int xo = 0; xo < Wo; ++xo) {
        double acc = 0.0;
        for (int dy = 0; dy < k; ++dy)
          for (int dx = 0; dx < k; ++dx)
            acc += src[(static_cast<size_t>(c) * H + y * k + dy) * W + xo * k + dx];
        v[(static_cast<size_t>(c) * Ho + y) * Wo + xo] = acc * inv;
      }
  return make_op({C, Ho, Wo}, std::move(v), {x},
                 [C, H, W, Ho, Wo, k, inv](Node& self, const std::vector<double>& g, Gradients& gs) {
                   auto& pg = gs.buf(self.parents[0].get());
                   for (int c = 0; c < C; ++c)
                     for (int y = 0; y < Ho; ++y)
                       for (int xo = 0; xo < Wo; ++xo) {
                         double gi = g[(static_cast<size_t>(c) * Ho + y) * Wo + xo] * inv;
                         for (int dy = 0; dy < k; ++dy)
                           for (int dx = 0; dx < k; ++dx)
                             pg[(static_cast<size_t>(c) * H + y * k + dy) * W + xo * k + dx] += gi;
                       }
                 });
}

namespace {
// Half-pixel source coordinates with edge clamping.
struct LerpAxis {
  std::vector<int> i0, i1;
  std::vector<double> w1;  // weight of i1; i0 gets (1-w1)
};

LerpAxis lerp_axis(int in, int out) {
  LerpAxis ax;
  ax.i0.resize(out);
  ax.i1.resize(out);
  ax.w1.resize(out);
  double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    double src = (o + 0.5) * scale - 0.5;
    double f = std::floor(src);
    double w1 = src - f;
    int i0 = static_cast<int>(f);
    int i1 = i0 + 1;
    if (i0 < 0) i0 = 0;
    if (i1 < 0) i1 = 0;
    if (i0 > in - 1) i0 = in - 1;
    if (i1 > in - 1) i1 = in - 1;
    ax.i0[o] = i0;
    ax.i1[o] = i1;
    ax.w1[o] = w1;
  }
  return ax;
}
}  // namespace

Tensor upsample_bilinear(const Tensor& x, int oh, int ow) {
  check_ndim(x, 3, "upsample_bilinear");
  if (oh < 1 || ow < 1) throw ShapeError("upsample_bilinear: target size must be positive");
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  auto ay = std::make_shared<LerpAxis>(lerp_axis(H, oh));
  auto axx = std::make_shared<LerpAxis>(lerp_axis(W, ow));
  std::vector<double> v(static_cast<size_t>(C) * oh * ow);
  const double* src = x.data();
  for (int c = 0; c < C; ++c) {
    const double* plane = src + static_cast<size_t>(c) * H * W;
    double* out = v.data() + static_cast<size_t>(c) * oh * ow;
    for (int y = 0; y < oh; ++y) {
      int y0 = ay->i0[y], y1 = ay->i1[y];
      double wy1 = ay->w1[y], wy0 = 1.0 - wy1;
      for (int xo = 0; xo < ow; ++xo) {
        int x0 = axx->i0[xo], x1 = axx->i1[xo];
        double wx1 = axx->w1[xo], wx0 = 1.0 - wx1;
        out[static_cast<size_t>(y) * ow + xo] =
            wy0 * (wx0 * plane[static_cast<size_t>(y0) * W + x0] + wx1 * plane[static_cast<size_t>(y0) * W + x1]) +
            wy1 * (wx0 * plane[static_cast<size_t>(y1) * W + x0] + wx1 * plane[static_cast<size_t>(y1) * W + x1]);
      }
    }
  }
  return make_op({C, oh, ow}, std::move(v), {x},
                 [C, H, W, oh, ow, ay, axx](Node& self, const std::vector<double>& g, Gradients& gs) {
                   auto& pg = gs.buf(self.parents[0].get());
                   for (int c = 0; c < C; ++c) {
                     double* gplane = pg.data() + static_cast<size_t>(c) * H * W;
                     const double* go = g.data() + static_cast<size_t>(c) * oh * ow;
                     for (int y = 0; y < oh; ++y) {
                       int y0 = ay->i0[y], y1 = ay->i1[y];
                       double wy1 = ay->w1[y], wy0 = 1.0 - wy1;
                       for (int xo = 0; xo < ow; ++xo) {
                         int x0 = axx->i0[xo], x1 = axx->i1[xo];
                         double wx1 = axx->w1[xo], wx0 = 1.0 - wx1;
                         double gv = go[static_cast<size_t>(y) * ow + xo];
                         gplane[static_cast<size_t>(y0) * W + x0] += gv * wy0 * wx0;
                         gplane[static_cast<size_t>(y0) * W + x1] += gv * wy0 * wx1;
                         gplane[static_cast<size_t>(y1) * W + x0] += gv * wy1 * wx0;
                         gplane[static_cast<size_t>(y1) * W + x1] += gv * wy1 * wx1;
                       }
                     }
                   }
                 });
}

Tensor group_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, int groups, double eps) {
  check_ndim(x, 3, "group_norm");
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (groups < 1 || C % groups != 0)
    throw ShapeError(cat("group_norm: ", groups, " groups for ", C, " channels"));
  if (gamma.dim(0) != C || beta.dim(0) != C) throw ShapeError("group_norm: affine size mismatch");
  int cs = C / groups;
  size_t plane = static_cast<size_t>(H) * W;
  size_t gn = static_cast<size_t>(cs) * plane;

  auto xhat = std::make_shared<std::vector<double>>(x.values().size());
  auto istd = std::make_shared<std::vector<double>>(static_cast<size_t>(groups));
  std::vector<double> v(x.values().size());
  const double* src = x.data();
  for (int g = 0; g < groups; ++g) {
    const double* base = src + static_cast<size_t>(g) * gn;
    double mu = 0.0;
    for (size_t i = 0; i < gn; ++i) mu += base[i];
    mu /= static_cast<double>(gn);
    double var = 0.0;
    for (size_t i = 0; i < gn; ++i) {
      double d = base[i] - mu;
      var += d * d;
    }
    var /= static_cast<double>(gn);
    double is = 1.0 / std::sqrt(var + eps);
    (*istd)[static_cast<size_t>(g)] = is;
    for (size_t i = 0; i < gn; ++i) (*xhat)[static_cast<size_t>(g) * gn + i] = (base[i] - mu) * is;
  }
  for (int c = 0; c < C; ++c) {
    double ga = gamma.data()[c], be = beta.data()[c];
    for (size_t i = 0; i < plane; ++i)
      v[static_cast<size_t>(c) * plane + i] = ga * (*xhat)[static_cast<size_t>(c) * plane + i] + be;
  }
  return make_op(
      {C, H, W}, std::move(v), {x, gamma, beta},
      [C, groups, cs, plane, gn, xhat, istd](Node& self, const std::vector<double>& g, Gradients& gs) {
        Node* px = self.parents[0].get();
        Node* pga = self.parents[1].get();
        Node* pbe = self.parents[2].get();
        if (pga->requires_grad) {
          auto& gg = gs.buf(pga);
          for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (size_t i = 0; i < plane; ++i)
              acc += g[static_cast<size_t>(c) * plane + i] * (*xhat)[static_cast<size_t>(c) * plane + i];
            gg[c] += acc;
          }
        }
        if (pbe->requires_grad) {
          auto& gb = gs.buf(pbe);
          for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (size_t i = 0; i < plane; ++i) acc += g[static_cast<size_t>(c) * plane + i];
            gb[c] += acc;
          }
        }
        if (px->requires_grad) {
          auto& gx = gs.buf(px);
          const double* gam = pga->value.data();
          for (int grp = 0; grp < groups; ++grp) {
            double sum_gh = 0.0, sum_ghx = 0.0;
            for (int cc = 0; cc < cs; ++cc) {
              int c = grp * cs + cc;
              double ga = gam[c];
              for (size_t i = 0; i < plane; ++i) {
                size_t idx = static_cast<size_t>(c) * plane + i;
                double gh = g[idx] * ga;
                sum_gh += gh;
                sum_ghx += gh * (*xhat)[idx];
              }
            }
            double n = static_cast<double>(gn);
            double is = (*istd)[static_cast<size_t>(grp)];
            double mgh = sum_gh / n, mghx = sum_ghx / n;
            for (int cc = 0; cc < cs; ++cc) {
              int c = grp * cs + cc;
              double ga = gam[c];
              for (size_t i = 0; i < plane; ++i) {
                size_t idx = static_cast<size_t>(c) * plane + i;
                double gh = g[idx] * ga;
                gx[idx] += is * (gh - mgh - (*xhat)[idx] * mghx);
              }
            }
          }
        }
      });
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  check_ndim(x, 2, "layer_norm");
  int N = x.dim(0), D = x.dim(1);
  if (gamma.dim(0) != D || beta.dim(0) != D) throw ShapeError("layer_norm: affine size mismatch");
  auto xhat = std::make_shared<std::vector<double>>(x.values().size());
  auto istd = std::make_shared<std::vector<double>>(static_cast<size_t>(N));
  std::vector<double> v(x.values().size());
  const double* src = x.data();
  for (int n = 0; n < N; ++n) {
    const double* row = src + static_cast<size_t>(n) * D;
    double mu = 0.0;
    for (int j = 0; j < D; ++j) mu += row[j];
    mu /= D;
    double var = 0.0;
    for (int j = 0; j < D; ++j) {
      double d = row[j] - mu;
      var += d * d;
    }
    var /= D;
    double is = 1.0 / std::sqrt(var + eps);
    (*istd)[static_cast<size_t>(n)] = is;
    for (int j = 0; j < D; ++j) {
      size_t idx = static_cast<size_t>(n) * D + j;
      (*xhat)[idx] = (row[j] - mu) * is;
      v[idx] = gamma.data()[j] * (*xhat)[idx] + beta.data()[j];
    }
  }
  return make_op({N, D}, std::move(v), {x, gamma, beta},
                 [N, D, xhat, istd](Node& self, const std::vector<double>& g, Gradients& gs) {
                   Node* px = self.parents[0].get();
                   Node* pga = self.parents[1].get();
                   Node* pbe = self.parents[2].get();
                   if (pga->requires_grad) {
                     auto& gg = gs.buf(pga);
                     for (int n = 0; n < N; ++n)
                       for (int j = 0; j < D; ++j)
                         gg[j] += g[static_cast<size_t>(n) * D + j] * (*xhat)[static_cast<size_t>(n) * D + j];
                   }
                   if (pbe->requires_grad) {
                     auto& gb = gs.buf(pbe);
                     for (int n = 0; n < N; ++n)
                       for (int j = 0; j < D; ++j) gb[j] += g[static_cast<size_t>(n) * D + j];
                   }
                   if (px->requires_grad) {
                     auto& gx = gs.buf(px);
                     const double* gam = pga->value.data();
                     for (int n = 0; n < N; ++n) {
                       double sum_gh = 0.0, sum_ghx = 0.0;
                       for (int j = 0; j < D; ++j) {
                         size_t idx = static_cast<size_t>(n) * D + j;
                         double gh = g[idx] * gam[j];
                         sum_gh += gh;
                         sum_ghx += gh * (*xhat)[idx];
                       }
                       double mgh = sum_gh / D, mghx = sum_ghx / D;
                       double is = (*istd)[static_cast<size_t>(n)];
                       for (int j = 0; j < D; ++j) {
                         size_t idx = static_cast<size_t>(n) * D + j;
                         double gh = g[idx] * gam[j];
                         gx[idx] += is * (gh - mgh - (*xhat)[idx] * mghx);
                       }
                     }
                   }
                 });
}

namespace {
Tensor softmax_generic(const Tensor& x, int rows, int m, int row_stride, int el_stride, Shape out_shape) {
  // rows iterated over the outer index, softmax over m entries spaced el_stride.
  std::vector<double> v(x.values().size());
  const double* src = x.data();
  for (int r = 0; r < rows; ++r) {
    const double* base = src + static_cast<size_t>(r) * row_stride;
    double* ob = v.data() + static_cast<size_t>(r) * row_stride;
    double mx = base[0];
    for (int j = 1; j < m; ++j) mx = std::max(mx, base[static_cast<size_t>(j) * el_stride]);
    double z = 0.0;
    for (int j = 0; j < m; ++j) {
      double e = std::exp(base[static_cast<size_t>(j) * el_stride] - mx);
      ob[static_cast<size_t>(j) * el_stride] = e;
      z += e;
    }
    double iz = 1.0 / z;
    for (int j = 0; j < m; ++j) ob[static_cast<size_t>(j) * el_stride] *= iz;
  }
  auto yv = std::make_shared<std::vector<double>>(v);
  return make_op(std::move(out_shape), std::move(v), {x},
                 [rows, m, row_stride, el_stride, yv](Node& self, const std::vector<double>& g, Gradients& gs) {
                   auto& pg = gs.buf(self.parents[0].get());
                   for (int r = 0; r < rows; ++r) {
                     const double* y = yv->data() + static_cast<size_t>(r) * row_stride;
                     const double* gr = g.data() + static_cast<size_t>(r) * row_stride;
                     double dot = 0.0;
                     for (int j = 0; j < m; ++j)
                       dot += y[static_cast<size_t>(j) * el_stride] * gr[static_cast<size_t>(j) * el_stride];
                     double* po = pg.data() + static_cast<size_t>(r) * row_stride;
                     for (int j = 0; j < m; ++j) {
                       size_t idx = static_cast<size_t>(j) * el_stride;
                       po[idx] += y[idx] * (gr[idx] - dot);
                     }
                   }
                 });
}
}  // namespace

Tensor softmax_rows(const Tensor& x) {
  check_ndim(x, 2, "softmax_rows");
  return softmax_generic(x, x.dim(0), x.dim(1), x.dim(1), 1, x.shape());
}

Tensor softmax_channels(const Tensor& x) {
  check_ndim(x, 3, "softmax_channels");
  int K = x.dim(0), H = x.dim(1), W = x.dim(2);
  // Per pixel over channels: treat each pixel as a "row" with stride H*W.
  // softmax_generic's row layout assumes rows at r*row_stride; pixels are at
  // offset p with element stride H*W, so build it directly here instead.
  std::vector<double> v(x.values().size());
  const double* src = x.data();
  size_t plane = static_cast<size_t>(H) * W;
  for (size_t p = 0; p < plane; ++p) {
    double mx = src[p];
    for (int k = 1; k < K; ++k) mx = std::max(mx, src[static_cast<size_t>(k) * plane + p]);
    double z = 0.0;
    for (int k = 0; k < K; ++k) {
      double e = std::exp(src[static_cast<size_t>(k) * plane + p] - mx);
      v[static_cast<size_t>(k) * plane + p] = e;
      z += e;
    }
    double iz = 1.0 / z;
    for (int k = 0; k < K; ++k) v[static_cast<size_t>(k) * plane + p] *= iz;
  }
  auto yv = std::make_shared<std::vector<double>>(v);
  return make_op({K, H, W}, std::move(v), {x},
                 [K, plane, yv](Node& self, const std::vector<double>& g, Gradients& gs) {
                   auto& pg = gs.buf(self.parents[0].get());
                   for (size_t p = 0; p < plane; ++p) {
                     double dot = 0.0;
                     for (int k = 0; k < K; ++k) {
                       size_t idx = static_cast<size_t>(k) * plane + p;
                       dot += (*yv)[idx] * g[idx];
                     }
                     for (int k = 0; k < K; ++k) {
                       size_t idx = static_cast<size_t>(k) * plane + p;
                       pg[idx] += (*yv)[idx] * (g[idx] - dot);
                     }
                   }
                 });
}

Tensor scale_channels(const Tensor& x, const Tensor& s) {
  check_ndim(x, 3, "scale_channels");
  check_ndim(s, 1, "scale_channels");
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (s.dim(0) != C)
    throw ShapeError(cat("scale_channels: ", s.dim(0), " weights for ", C, " channels"));
  size_t plane = static_cast<size_t>(H) * W;
  std::vector<double> v(x.values().size());
  for (int c = 0; c < C; ++c) {
    double sc = s.data()[c];
    const double* src = x.data() + static_cast<size_t>(c) * plane;
    double* dst = v.data() + static_cast<size_t>(c) * plane;
    for (size_t i = 0; i < plane; ++i) dst[i] = sc * src[i];
  }
  return make_op({C, H, W}, std::move(v), {x, s},
                 [C, plane](Node& self, const std::vector<double>& g, Gradients& gs) {
                   Node* px = self.parents[0].get();
                   Node* ps = self.parents[1].get();
                   if (px->requires_grad) {
                     auto& gx = gs.buf(px);
                     for (int c = 0; c < C; ++c) {
                       double sc = ps->value[static_cast<size_t>(c)];
                       for (size_t i = 0; i < plane; ++i)
                         gx[static_cast<size_t>(c) * plane + i] += sc * g[static_cast<size_t>(c) * plane + i];
                     }
                   }
                   if (ps->requires_grad) {
                     auto& gsv = gs.buf(ps);
                     for (int c = 0; c < C; ++c) {
                       double acc = 0.0;
                       for (size_t i = 0; i < plane; ++i)
                         acc += g[static_cast<size_t>(c) * plane + i] * px->value[static_cast<size_t>(c) * plane + i];
                       gsv[static_cast<size_t>(c)] += acc;
                     }
                   }
                 });
}

Tensor mul_spatial(const Tensor& x, const Tensor& a) {
  check_ndim(x, 3, "mul_spatial");
  check_ndim(a, 3, "mul_spatial");
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  if (a.dim(0) != 1 || a.dim(1) != H || a.dim(2) != W)
    throw ShapeError(cat("mul_spatial: gate ", shape_str(a.shape()), " for map ", shape_str(x.shape())));
  size_t plane = static_cast<size_t>(H) * W;
  std::vector<double> v(x.values().size());
  for (int c = 0; c < C; ++c)
    for (size_t i = 0; i < plane; ++i)
      v[static_cast<size_t>(c) * plane + i] = x.data()[static_cast<size_t>(c) * plane + i] * a.data()[i];
  return make_op({C, H, W}, std::move(v), {x, a},
                 [C, plane](Node& self, const std::vector<double>& g, Gradients& gs) {
                   Node* px = self.parents[0].get();
                   Node* pa = self.parents[1].get();
                   if (px->requires_grad) {
                     auto& gx = gs.buf(px);
                     for (int c = 0; c < C; ++c)
                       for (size_t i = 0; i < plane; ++i)
                         gx[static_cast<size_t>(c) * plane + i] +=
                             g[static_cast<size_t>(c) * plane + i] * pa->value[i];
                   }
                   if (pa->requires_grad) {
                     auto& ga = gs.buf(pa);
                     for (int c = 0; c < C; ++c)
                       for (size_t i = 0; i < plane; ++i)
                         ga[i] += g[static_cast<size_t>(c) * plane + i] *
                                  px->value[static_cast<size_t>(c) * plane + i];
                   }
                 });
}

Tensor global_avg_channels(const Tensor& x) {
  check_ndim(x, 3, "global_avg_channels");
  int C = x.dim(0), H = x.dim(1), W = x.dim(2);
  size_t plane = static_cast<size_t>(H) * W;
  double inv = 1.0 / static_cast<double>(plane);
  std::vector<double> v(static_cast<size_t>(C));
  for (int c = 0; c < C; ++c) {
    double acc = 0.0;
    const double* src = x.data() + static_cast<size_t>(c) * plane;
    for (size_t i = 0; i < plane; ++i) acc += src[i];
    v[static_cast<size_t>(c)] = acc * inv;
  }
  return make_op({C}, std::move(v), {x},
                 [C, plane, inv](Node& self, const std::vector<double>& g, Gradients& gs) {
                   auto& pg = gs.buf(self.parents[0].get());
                   for (int c = 0; c < C; ++c) {
                     double gi = g[static_cast<size_t>(c)] * inv;
                     for (size_t i = 0; i < plane; ++i) pg[static_cast<size_t>(c) * plane + i] += gi;
                   }
                 });
}

Tensor dropout(const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw ValidationError("dropout: rate must be in [0,1)");
  if (rate == 0.0) return x;
  auto mask = std::make_shared<std::vector<double>>(x.values().size());
  double scale = 1.0 / (1.0 - rate);
  for (auto& m : *mask) m = (rng.uniform() >= rate) ? scale : 0.0;
  std::vector<double> v(x.values().size());
  for (size_t i = 0; i < v.size(); ++i) v[i] = x.data()[i] * (*mask)[i];
  return make_op(x.shape(), std::move(v), {x},
                 [mask](Node& self, const std::vector<double>& g, Gradients& gs) {
                   auto& pg = gs.buf(self.parents[0].get());
                   for (size_t i = 0; i < g.size(); ++i) pg[i] += g[i] * (*mask)[i];
                 });
}

Tensor sum_channel_range(const Tensor& x, int c0, int c1) {
  check_ndim(x, 3, "sum_channel_range");
  if (c0 < 0 || c1 > x.dim(0) || c0 >= c1)
    throw ShapeError(cat("sum_channel_range: [", c0, ",", c1, ") of ", shape_str(x.shape())));
  int H = x.dim(1), W = x.dim(2);
  size_t plane = static_cast<size_t>(H) * W;
  std::vector<double> v(plane, 0.0);
  for (int c = c0; c < c1; ++c)
    for (size_t i = 0; i < plane; ++i) v[i] += x.data()[static_cast<size_t>(c) * plane + i];
  return make_op({1, H, W}, std::move(v), {x},
                 [c0, c1, plane](Node& self, const std::vector<double>& g, Gradients& gs) {
                   auto& pg = gs.buf(self.parents[0].get());
                   for (int c = c0; c < c1; ++c)
                     for (size_t i = 0; i < plane; ++i) pg[static_cast<size_t>(c) * plane + i] += g[i];
                 });
}

Tensor cross_entropy_channels(const Tensor& logits, const std::vector<int>& labels) {
  check_ndim(logits, 3, "cross_entropy_channels");
  int K = logits.dim(0), H = logits.dim(1), W = logits.dim(2);
  size_t plane = static_cast<size_t>(H) * W;
  if (labels.size() != plane)
    throw ShapeError(cat("cross_entropy_channels: ", labels.size(), " labels for ", H, "x", W));
  for (int y : labels)
    if (y < 0 || y >= K) throw ValidationError(cat("cross_entropy_channels: label ", y, " out of range"));

  auto probs = std::make_shared<std::vector<double>>(logits.values().size());
  auto labs = std::make_shared<std::vector<int>>(labels);
  const double* src = logits.data();
  double total = 0.0;
  for (size_t p = 0; p < plane; ++p) {
    double mx = src[p];
    for (int k = 1; k < K; ++k) mx = std::max(mx, src[static_cast<size_t>(k) * plane + p]);
    double z = 0.0;
    for (int k = 0; k < K; ++k) z += std::exp(src[static_cast<size_t>(k) * plane + p] - mx);
    double lse = std::log(z) + mx;
    total += lse - src[static_cast<size_t>(labels[p]) * plane + p];
    double iz = 1.0 / z;
    for (int k = 0; k < K; ++k)
      (*probs)[static_cast<size_t>(k) * plane + p] = std::exp(src[static_cast<size_t>(k) * plane + p] - mx) * iz;
  }
  double inv = 1.0 / static_cast<double>(plane);
  return make_op({1}, {total * inv}, {logits},
                 [K, plane, inv, probs, labs](Node& self, const std::vector<double>& g, Gradients& gs) {
                   auto& pg = gs.buf(self.parents[0].get());
                   double gi = g[0] * inv;
                   for (size_t p = 0; p < plane; ++p)
                     for (int k = 0; k < K; ++k) {
                       size_t idx = static_cast<size_t>(k) * plane + p;
                       double delta = (k == (*labs)[p]) ? 1.0 : 0.0;
                       pg[idx] += gi * ((*probs)[idx] - delta);
                     }
                 });
}

Tensor bce_mean(const Tensor& pred, const std::vector<double>& target, double clamp_eps) {
  if (pred.values().size() != target.size())
    throw ShapeError(cat("bce_mean: ", target.size(), " targets for ", pred.values().size(), " predictions"));
  auto tgt = std::make_shared<std::vector<double>>(target);
  double lo = clamp_eps, hi = 1.0 - clamp_eps;
  const double* p = pred.data();
  double total = 0.0;
  for (size_t i = 0; i < target.size(); ++i) {
    double pc = std::min(std::max(p[i], lo), hi);
    total -= target[i] * std::log(pc) + (1.0 - target[i]) * std::log(1.0 - pc);
  }
  double inv = 1.0 / static_cast<double>(target.size());
  return make_op({1}, {total * inv}, {pred},
                 [tgt, lo, hi, inv](Node& self, const std::vector<double>& g, Gradients& gs) {
                   auto& pg = gs.buf(self.parents[0].get());
                   const double* p = self.parents[0]->value.data();
                   double gi = g[0] * inv;
                   for (size_t i = 0; i < pg.size(); ++i) {
                     if (p[i] < lo || p[i] > hi) continue;  // clamped region, zero slope
                     pg[i] += gi * (p[i] - (*tgt)[i]) / (p[i] * (1.0 - p[i]));
                   }
                 });
}

Tensor kl_channels(const Tensor& student_logits, const std::vector<double>& teacher_probs,
                   double temperature) {
  check_ndim(student_logits, 3, "kl_channels");
  if (teacher_probs.size() != student_logits.values().size())
    throw ShapeError("kl_channels: teacher distribution size mismatch");
  if (temperature <= 0.0) throw ValidationError("kl_channels: temperature must be positive");
  int K = student_logits.dim(0), H = student_logits.dim(1), W = student_logits.dim(2);
  size_t plane = static_cast<size_t>(H) * W;
  auto pt = std::make_shared<std::vector<double>>(teacher_probs);
  auto ps = std::make_shared<std::vector<double>>(student_logits.values().size());
  const double* z = student_logits.data();
  double total = 0.0;
  for (size_t p = 0; p < plane; ++p) {
    double mx = z[p] / temperature;
    for (int k = 1; k < K; ++k) mx = std::max(mx, z[static_cast<size_t>(k) * plane + p] / temperature);
    double zs = 0.0;
    for (int k = 0; k < K; ++k)
      zs += std::exp(z[static_cast<size_t>(k) * plane + p] / temperature - mx);
    double lz = std::log(zs) + mx;
    for (int k = 0; k < K; ++k) {
      size_t idx = static_cast<size_t>(k) * plane + p;
      double logps = z[idx] / temperature - lz;
      (*ps)[idx] = std::exp(logps);
      double ptv = (*pt)[idx];
      if (ptv > 0.0) total += ptv * (std::log(ptv) - logps);
    }
  }
  double inv = 1.0 / static_cast<double>(plane);
  return make_op({1}, {total * inv}, {student_logits},
                 [K, plane, inv, temperature, pt, ps](Node& self, const std::vector<double>& g, Gradients& gs) {
                   auto& pg = gs.buf(self.parents[0].get());
                   double gi = g[0] * inv / temperature;
                   for (size_t i = 0; i < pg.size(); ++i) pg[i] += gi * ((*ps)[i] - (*pt)[i]);
                 });
}

}  // namespace ops
}  // namespace fusionseg
