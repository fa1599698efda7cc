#include "fb/kernels.hpp"

#include <cmath>

namespace fb::kernels {

static constexpr double kLnEps = 1e-6;

// ============================================================================
// Matrix products
// ============================================================================

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            const double* ai = a + static_cast<std::int64_t>(i) * k;
            double acc = 0.0;
            for (int r = 0; r < k; ++r) acc += ai[r] * b[static_cast<std::int64_t>(r) * n + j];
            c[static_cast<std::int64_t>(i) * n + j] = acc;
        }
    }
}

void matmul_nt(const double* a, const double* bt, double* c, int m, int k, int n) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            const double* ai = a + static_cast<std::int64_t>(i) * k;
            const double* bj = bt + static_cast<std::int64_t>(j) * k;
            double acc = 0.0;
            for (int r = 0; r < k; ++r) acc += ai[r] * bj[r];
            c[static_cast<std::int64_t>(i) * n + j] = acc;
        }
    }
}

void matmul_tn(const double* at, const double* b, double* c, int m, int k, int n) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int r = 0; r < k; ++r)
                acc += at[static_cast<std::int64_t>(r) * m + i] * b[static_cast<std::int64_t>(r) * n + j];
            c[static_cast<std::int64_t>(i) * n + j] += acc;
        }
    }
}

void add_bias(double* y, const double* bias, int rows, int dim) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i) {
        double* yi = y + static_cast<std::int64_t>(i) * dim;
        for (int j = 0; j < dim; ++j) yi[j] += bias[j];
    }
}

void bias_grad(const double* dy, double* db, int rows, int dim) {
#pragma omp parallel for schedule(static)
    for (int j = 0; j < dim; ++j) {
        double acc = 0.0;
        for (int i = 0; i < rows; ++i) acc += dy[static_cast<std::int64_t>(i) * dim + j];
        db[j] += acc;
    }
}

// ============================================================================
// LayerNorm
// ============================================================================

void layernorm_forward(const double* x, double* y, double* mean, double* rstd,
                       int rows, int dim) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i) {
        const double* xi = x + static_cast<std::int64_t>(i) * dim;
        double* yi = y + static_cast<std::int64_t>(i) * dim;
        double mu = 0.0;
        for (int j = 0; j < dim; ++j) mu += xi[j];
        mu /= dim;
        double var = 0.0;
        for (int j = 0; j < dim; ++j) {
            double d = xi[j] - mu;
            var += d * d;
        }
        var /= dim;
        double rs = 1.0 / std::sqrt(var + kLnEps);
        for (int j = 0; j < dim; ++j) yi[j] = (xi[j] - mu) * rs;
        mean[i] = mu;
        rstd[i] = rs;
    }
}

void layernorm_backward(const double* dy, const double* x, const double* mean,
                        const double* rstd, double* dx, int rows, int dim) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i) {
        const double* dyi = dy + static_cast<std::int64_t>(i) * dim;
        const double* xi = x + static_cast<std::int64_t>(i) * dim;
        double* dxi = dx + static_cast<std::int64_t>(i) * dim;
        double mu = mean[i], rs = rstd[i];
        double sum_dy = 0.0, sum_dyxhat = 0.0;
        for (int j = 0; j < dim; ++j) {
            double xhat = (xi[j] - mu) * rs;
            sum_dy += dyi[j];
            sum_dyxhat += dyi[j] * xhat;
        }
        for (int j = 0; j < dim; ++j) {
            double xhat = (xi[j] - mu) * rs;
            dxi[j] = rs * (dyi[j] - sum_dy / dim - xhat * sum_dyxhat / dim);
        }
    }
}

// ============================================================================
// Activations
// ============================================================================

// tanh-approximated GELU, matching the usual transformer MLP
static inline double gelu_scalar(double x) {
    const double c = 0.7978845608028654;  // sqrt(2/pi)
    return 0.5 * x * (1.0 + std::tanh(c * (x + 0.044715 * x * x * x)));
}

void gelu_forward(const double* x, double* y, std::int64_t n) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
}

void gelu_backward(const double* x, const double* dy, double* dx, std::int64_t n) {
    const double c = 0.7978845608028654;
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        double xi = x[i];
        double u = c * (xi + 0.044715 * xi * xi * xi);
        double th = std::tanh(u);
        double sech2 = 1.0 - th * th;
        double du = c * (1.0 + 3.0 * 0.044715 * xi * xi);
        dx[i] = dy[i] * (0.5 * (1.0 + th) + 0.5 * xi * sech2 * du);
    }
}

void silu_forward(const double* x, double* y, std::int64_t n) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        double s = 1.0 / (1.0 + std::exp(-x[i]));
        y[i] = x[i] * s;
    }
}

void silu_backward(const double* x, const double* dy, double* dx, std::int64_t n) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        double s = 1.0 / (1.0 + std::exp(-x[i]));
        dx[i] = dy[i] * (s * (1.0 + x[i] * (1.0 - s)));
    }
}

void tanh_forward(const double* x, double* y, std::int64_t n) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) y[i] = std::tanh(x[i]);
}

void tanh_backward(const double* y, const double* dy, double* dx, std::int64_t n) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) dx[i] = dy[i] * (1.0 - y[i] * y[i]);
}

// ============================================================================
// Attention
// ============================================================================

void softmax_rows(double* x, int rows, int dim) {
#pragma omp parallel for schedule(static)
    for (int i = 0; i < rows; ++i) {
        double* xi = x + static_cast<std::int64_t>(i) * dim;
        double mx = xi[0];
        for (int j = 1; j < dim; ++j) mx = std::max(mx, xi[j]);
        double sum = 0.0;
        for (int j = 0; j < dim; ++j) {
            xi[j] = std::exp(xi[j] - mx);
            sum += xi[j];
        }
        double inv = 1.0 / sum;
        for (int j = 0; j < dim; ++j) xi[j] *= inv;
    }
}

void attention_forward(const double* qkv, double* out, double* probs,
                       int batch, int t, int heads, int dim) {
    const int hd = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const std::int64_t row = 3LL * dim;
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
            const double* base = qkv + static_cast<std::int64_t>(b) * t * row;
            double* p = probs + ((static_cast<std::int64_t>(b) * heads + h) * t) * t;
            // scores + softmax
            for (int i = 0; i < t; ++i) {
                const double* qi = base + static_cast<std::int64_t>(i) * row + h * hd;
                double* pi = p + static_cast<std::int64_t>(i) * t;
                double mx = -1e300;
                for (int j = 0; j < t; ++j) {
                    const double* kj = base + static_cast<std::int64_t>(j) * row + dim + h * hd;
                    double s = 0.0;
                    for (int d = 0; d < hd; ++d) s += qi[d] * kj[d];
                    pi[j] = s * scale;
                    mx = std::max(mx, pi[j]);
                }
                double sum = 0.0;
                for (int j = 0; j < t; ++j) {
                    pi[j] = std::exp(pi[j] - mx);
                    sum += pi[j];
                }
                double inv = 1.0 / sum;
                for (int j = 0; j < t; ++j) pi[j] *= inv;
            }
            // out = probs * V
            for (int i = 0; i < t; ++i) {
                const double* pi = p + static_cast<std::int64_t>(i) * t;
                double* oi = out + (static_cast<std::int64_t>(b) * t + i) * dim + h * hd;
                for (int d = 0; d < hd; ++d) {
                    double acc = 0.0;
                    for (int j = 0; j < t; ++j) {
                        const double* vj = base + static_cast<std::int64_t>(j) * row + 2 * dim + h * hd;
                        acc += pi[j] * vj[d];
                    }
                    oi[d] = acc;
                }
            }
        }
    }
}

void attention_backward(const double* qkv, const double* probs, const double* dout,
                        double* dqkv, double* dprobs_scratch,
                        int batch, int t, int heads, int dim) {
    const int hd = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const std::int64_t row = 3LL * dim;
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
            const double* base = qkv + static_cast<std::int64_t>(b) * t * row;
            double* dbase = dqkv + static_cast<std::int64_t>(b) * t * row;
            const double* p = probs + ((static_cast<std::int64_t>(b) * heads + h) * t) * t;
            double* dp = dprobs_scratch + ((static_cast<std::int64_t>(b) * heads + h) * t) * t;

            // dV and dP
            for (int j = 0; j < t; ++j) {
                double* dvj = dbase + static_cast<std::int64_t>(j) * row + 2 * dim + h * hd;
                for (int d = 0; d < hd; ++d) {
                    double acc = 0.0;
                    for (int i = 0; i < t; ++i)
                        acc += p[static_cast<std::int64_t>(i) * t + j] *
                               dout[(static_cast<std::int64_t>(b) * t + i) * dim + h * hd + d];
                    dvj[d] += acc;
                }
            }
            for (int i = 0; i < t; ++i) {
                const double* doi = dout + (static_cast<std::int64_t>(b) * t + i) * dim + h * hd;
                for (int j = 0; j < t; ++j) {
                    const double* vj = base + static_cast<std::int64_t>(j) * row + 2 * dim + h * hd;
                    double acc = 0.0;
                    for (int d = 0; d < hd; ++d) acc += doi[d] * vj[d];
                    dp[static_cast<std::int64_t>(i) * t + j] = acc;
                }
            }
            // softmax jacobian: dS_ij = P_ij * (dP_ij - sum_k P_ik dP_ik)
            for (int i = 0; i < t; ++i) {
                const double* pi = p + static_cast<std::int64_t>(i) * t;
                double* dpi = dp + static_cast<std::int64_t>(i) * t;
                double dot = 0.0;
                for (int j = 0; j < t; ++j) dot += pi[j] * dpi[j];
                for (int j = 0; j < t; ++j) dpi[j] = pi[j] * (dpi[j] - dot);
            }
            // dQ = dS * K * scale ; dK = dS^T * Q * scale
            for (int i = 0; i < t; ++i) {
                const double* dsi = dp + static_cast<std::int64_t>(i) * t;
                double* dqi = dbase + static_cast<std::int64_t>(i) * row + h * hd;
                for (int d = 0; d < hd; ++d) {
                    double acc = 0.0;
                    for (int j = 0; j < t; ++j)
                        acc += dsi[j] * base[static_cast<std::int64_t>(j) * row + dim + h * hd + d];
                    dqi[d] += acc * scale;
                }
            }
            for (int j = 0; j < t; ++j) {
                double* dkj = dbase + static_cast<std::int64_t>(j) * row + dim + h * hd;
                for (int d = 0; d < hd; ++d) {
                    double acc = 0.0;
                    for (int i = 0; i < t; ++i)
                        acc += dp[static_cast<std::int64_t>(i) * t + j] *
                               base[static_cast<std::int64_t>(i) * row + h * hd + d];
                    dkj[d] += acc * scale;
                }
            }
        }
    }
}

// ============================================================================
// Convolution 3x3, pad 1
// ============================================================================

void conv3x3_forward(const double* x, const double* w, const double* b, double* y,
                     int h, int wd, int cin, int cout, int stride) {
    const int ho = (h + stride - 1) / stride;
    const int wo = (wd + stride - 1) / stride;
#pragma omp parallel for collapse(2) schedule(static)
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            double* yp = y + (static_cast<std::int64_t>(oy) * wo + ox) * cout;
            for (int oc = 0; oc < cout; ++oc) {
                const double* wk = w + static_cast<std::int64_t>(oc) * cin * 9;
                double acc = b ? b[oc] : 0.0;
                for (int ky = 0; ky < 3; ++ky) {
                    int iy = oy * stride + ky - 1;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        int ix = ox * stride + kx - 1;
                        if (ix < 0 || ix >= wd) continue;
                        const double* xp = x + (static_cast<std::int64_t>(iy) * wd + ix) * cin;
                        const double* wp = wk + (ky * 3 + kx);
                        for (int ic = 0; ic < cin; ++ic) acc += xp[ic] * wp[static_cast<std::int64_t>(ic) * 9];
                    }
                }
                yp[oc] = acc;
            }
        }
    }
}

void conv3x3_backward_input(const double* dy, const double* w, double* dx,
                            int h, int wd, int cin, int cout, int stride) {
    const int ho = (h + stride - 1) / stride;
    const int wo = (wd + stride - 1) / stride;
#pragma omp parallel for collapse(2) schedule(static)
    for (int iy = 0; iy < h; ++iy) {
        for (int ix = 0; ix < wd; ++ix) {
            double* dxp = dx + (static_cast<std::int64_t>(iy) * wd + ix) * cin;
            for (int ic = 0; ic < cin; ++ic) {
                double acc = 0.0;
                // output positions whose 3x3 window covers (iy, ix)
                for (int ky = 0; ky < 3; ++ky) {
                    int num = iy + 1 - ky;
                    if (num < 0 || num % stride != 0) continue;
                    int oy = num / stride;
                    if (oy >= ho) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        int numx = ix + 1 - kx;
                        if (numx < 0 || numx % stride != 0) continue;
                        int ox = numx / stride;
                        if (ox >= wo) continue;
                        const double* dyp = dy + (static_cast<std::int64_t>(oy) * wo + ox) * cout;
                        for (int oc = 0; oc < cout; ++oc)
                            acc += dyp[oc] * w[((static_cast<std::int64_t>(oc) * cin + ic) * 9) + ky * 3 + kx];
                    }
                }
                dxp[ic] += acc;
            }
        }
    }
}

// ============================================================================
// Serial references
// ============================================================================

namespace serial {

void matmul(const double* a, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            const double* ai = a + static_cast<std::int64_t>(i) * k;
            double acc = 0.0;
            for (int r = 0; r < k; ++r) acc += ai[r] * b[static_cast<std::int64_t>(r) * n + j];
            c[static_cast<std::int64_t>(i) * n + j] = acc;
        }
    }
}

void matmul_nt(const double* a, const double* bt, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            const double* ai = a + static_cast<std::int64_t>(i) * k;
            const double* bj = bt + static_cast<std::int64_t>(j) * k;
            double acc = 0.0;
            for (int r = 0; r < k; ++r) acc += ai[r] * bj[r];
            c[static_cast<std::int64_t>(i) * n + j] = acc;
        }
    }
}

void matmul_tn(const double* at, const double* b, double* c, int m, int k, int n) {
    for (int i = 0; i < m; ++i) {
        for (int j = 0; j < n; ++j) {
            double acc = 0.0;
            for (int r = 0; r < k; ++r)
                acc += at[static_cast<std::int64_t>(r) * m + i] * b[static_cast<std::int64_t>(r) * n + j];
            c[static_cast<std::int64_t>(i) * n + j] += acc;
        }
    }
}

void layernorm_forward(const double* x, double* y, double* mean, double* rstd,
                       int rows, int dim) {
    for (int i = 0; i < rows; ++i) {
        const double* xi = x + static_cast<std::int64_t>(i) * dim;
        double* yi = y + static_cast<std::int64_t>(i) * dim;
        double mu = 0.0;
        for (int j = 0; j < dim; ++j) mu += xi[j];
        mu /= dim;
        double var = 0.0;
        for (int j = 0; j < dim; ++j) {
            double d = xi[j] - mu;
            var += d * d;
        }
        var /= dim;
        double rs = 1.0 / std::sqrt(var + kLnEps);
        for (int j = 0; j < dim; ++j) yi[j] = (xi[j] - mu) * rs;
        mean[i] = mu;
        rstd[i] = rs;
    }
}

void layernorm_backward(const double* dy, const double* x, const double* mean,
                        const double* rstd, double* dx, int rows, int dim) {
    for (int i = 0; i < rows; ++i) {
        const double* dyi = dy + static_cast<std::int64_t>(i) * dim;
        const double* xi = x + static_cast<std::int64_t>(i) * dim;
        double* dxi = dx + static_cast<std::int64_t>(i) * dim;
        double mu = mean[i], rs = rstd[i];
        double sum_dy = 0.0, sum_dyxhat = 0.0;
        for (int j = 0; j < dim; ++j) {
            double xhat = (xi[j] - mu) * rs;
            sum_dy += dyi[j];
            sum_dyxhat += dyi[j] * xhat;
        }
        for (int j = 0; j < dim; ++j) {
            double xhat = (xi[j] - mu) * rs;
            dxi[j] = rs * (dyi[j] - sum_dy / dim - xhat * sum_dyxhat / dim);
        }
    }
}

void gelu_forward(const double* x, double* y, std::int64_t n) {
    for (std::int64_t i = 0; i < n; ++i) y[i] = gelu_scalar(x[i]);
}

void attention_forward(const double* qkv, double* out, double* probs,
                       int batch, int t, int heads, int dim) {
    const int hd = dim / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(hd));
    const std::int64_t row = 3LL * dim;
    for (int b = 0; b < batch; ++b) {
        for (int h = 0; h < heads; ++h) {
            const double* base = qkv + static_cast<std::int64_t>(b) * t * row;
            double* p = probs + ((static_cast<std::int64_t>(b) * heads + h) * t) * t;
            for (int i = 0; i < t; ++i) {
                const double* qi = base + static_cast<std::int64_t>(i) * row + h * hd;
                double* pi = p + static_cast<std::int64_t>(i) * t;
                double mx = -1e300;
                for (int j = 0; j < t; ++j) {
                    const double* kj = base + static_cast<std::int64_t>(j) * row + dim + h * hd;
                    double s = 0.0;
                    for (int d = 0; d < hd; ++d) s += qi[d] * kj[d];
                    pi[j] = s * scale;
                    mx = std::max(mx, pi[j]);
                }
                double sum = 0.0;
                for (int j = 0; j < t; ++j) {
                    pi[j] = std::exp(pi[j] - mx);
                    sum += pi[j];
                }
                double inv = 1.0 / sum;
                for (int j = 0; j < t; ++j) pi[j] *= inv;
            }
            for (int i = 0; i < t; ++i) {
                const double* pi = p + static_cast<std::int64_t>(i) * t;
                double* oi = out + (static_cast<std::int64_t>(b) * t + i) * dim + h * hd;
                for (int d = 0; d < hd; ++d) {
                    double acc = 0.0;
                    for (int j = 0; j < t; ++j) {
                        const double* vj = base + static_cast<std::int64_t>(j) * row + 2 * dim + h * hd;
                        acc += pi[j] * vj[d];
                    }
                    oi[d] = acc;
                }
            }
        }
    }
}

void conv3x3_forward(const double* x, const double* w, const double* b, double* y,
                     int h, int wd, int cin, int cout, int stride) {
    const int ho = (h + stride - 1) / stride;
    const int wo = (wd + stride - 1) / stride;
    for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
            double* yp = y + (static_cast<std::int64_t>(oy) * wo + ox) * cout;
            for (int oc = 0; oc < cout; ++oc) {
                const double* wk = w + static_cast<std::int64_t>(oc) * cin * 9;
                double acc = b ? b[oc] : 0.0;
                for (int ky = 0; ky < 3; ++ky) {
                    int iy = oy * stride + ky - 1;
                    if (iy < 0 || iy >= h) continue;
                    for (int kx = 0; kx < 3; ++kx) {
                        int ix = ox * stride + kx - 1;
                        if (ix < 0 || ix >= wd) continue;
                        const double* xp = x + (static_cast<std::int64_t>(iy) * wd + ix) * cin;
                        const double* wp = wk + (ky * 3 + kx);
                        for (int ic = 0; ic < cin; ++ic) acc += xp[ic] * wp[static_cast<std::int64_t>(ic) * 9];
                    }
                }
                yp[oc] = acc;
            }
        }
    }
}

}  // namespace serial

}  // namespace fb::kernels
