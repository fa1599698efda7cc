#pragma once

#include <cstdint>

namespace fb::kernels {

// OpenMP compute kernels. Every kernel computes each output element with a
// fixed serial reduction order, so results are bit-identical to the
// fb::kernels::serial reference for any thread count. Parallelism is only
// over independent output elements (rows, (batch, head) pairs, pixels).

// ---------------------------------------------------------------------------
// Matrix products (row-major)
// ---------------------------------------------------------------------------

// c[m,n] = a[m,k] * b[k,n]
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
// c[m,n] = a[m,k] * bt[n,k]^T          (linear forward: y = x * W^T)
void matmul_nt(const double* a, const double* bt, double* c, int m, int k, int n);
// c[m,n] += at[k,m]^T * b[k,n]         (weight grad: dW += dY^T * X; accumulates)
void matmul_tn(const double* at, const double* b, double* c, int m, int k, int n);

// y[rows,dim] += bias[dim] per row
void add_bias(double* y, const double* bias, int rows, int dim);
// db[dim] += sum over rows of dy
void bias_grad(const double* dy, double* db, int rows, int dim);

// ---------------------------------------------------------------------------
// Normalization (no affine parameters; modulation supplies shift/scale)
// ---------------------------------------------------------------------------

void layernorm_forward(const double* x, double* y, double* mean, double* rstd,
                       int rows, int dim);
void layernorm_backward(const double* dy, const double* x, const double* mean,
                        const double* rstd, double* dx, int rows, int dim);

// ---------------------------------------------------------------------------
// Activations (elementwise)
// ---------------------------------------------------------------------------

void gelu_forward(const double* x, double* y, std::int64_t n);
void gelu_backward(const double* x, const double* dy, double* dx, std::int64_t n);
void silu_forward(const double* x, double* y, std::int64_t n);
void silu_backward(const double* x, const double* dy, double* dx, std::int64_t n);
void tanh_forward(const double* x, double* y, std::int64_t n);
void tanh_backward(const double* y, const double* dy, double* dx, std::int64_t n);

// ---------------------------------------------------------------------------
// Attention (full, multi-head)
// ---------------------------------------------------------------------------
// qkv layout: [tokens, 3*dim] rows are per-token [q | k | v]; heads are
// contiguous slices of width hd = dim/heads inside each of q, k, v.
// probs: [batch, heads, t, t] softmax rows, cached for backward.

void attention_forward(const double* qkv, double* out, double* probs,
                       int batch, int t, int heads, int dim);
void attention_backward(const double* qkv, const double* probs, const double* dout,
                        double* dqkv, double* dprobs_scratch,
                        int batch, int t, int heads, int dim);

// softmax over rows, in place
void softmax_rows(double* x, int rows, int dim);

// ---------------------------------------------------------------------------
// Convolution, 3x3, zero padding 1 (perceptual feature stack)
// ---------------------------------------------------------------------------
// x: [h, w, cin], w: [cout, cin, 3, 3], y: [ho, wo, cout], ho = ceil(h/stride)

void conv3x3_forward(const double* x, const double* w, const double* b, double* y,
                     int h, int wd, int cin, int cout, int stride);
void conv3x3_backward_input(const double* dy, const double* w, double* dx,
                            int h, int wd, int cin, int cout, int stride);

// ---------------------------------------------------------------------------
// Serial reference implementations (kept for tests and the benchmark)
// ---------------------------------------------------------------------------
namespace serial {
void matmul(const double* a, const double* b, double* c, int m, int k, int n);
void matmul_nt(const double* a, const double* bt, double* c, int m, int k, int n);
void matmul_tn(const double* at, const double* b, double* c, int m, int k, int n);
void layernorm_forward(const double* x, double* y, double* mean, double* rstd,
                       int rows, int dim);
void layernorm_backward(const double* dy, const double* x, const double* mean,
                        const double* rstd, double* dx, int rows, int dim);
void gelu_forward(const double* x, double* y, std::int64_t n);
void attention_forward(const double* qkv, double* out, double* probs,
                       int batch, int t, int heads, int dim);
void conv3x3_forward(const double* x, const double* w, const double* b, double* y,
                     int h, int wd, int cin, int cout, int stride);
}  // namespace serial

}  // namespace fb::kernels
