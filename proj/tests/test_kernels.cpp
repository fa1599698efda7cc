#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fb/kernels.hpp"
#include "fb/rng.hpp"
#include "fb/tensor.hpp"

using namespace fb;
namespace k = fb::kernels;

static Tensor randn(std::vector<std::int64_t> shape, Rng& rng) {
    Tensor t(shape);
    for (auto& v : t.data) v = rng.normal();
    return t;
}

TEST_CASE("matmul matches a tiny hand-computed product") {
    // [1 2; 3 4] * [5 6; 7 8]
    double a[4] = {1, 2, 3, 4}, b[4] = {5, 6, 7, 8}, c[4];
    k::matmul(a, b, c, 2, 2, 2);
    CHECK(c[0] == 19);
    CHECK(c[1] == 22);
    CHECK(c[2] == 43);
    CHECK(c[3] == 50);
}

TEST_CASE("parallel kernels are bit-identical to the serial reference") {
    Rng rng(7);
    const int m = 37, kk = 29, n = 23;
    Tensor a = randn({m, kk}, rng), b = randn({kk, n}, rng), bt = randn({n, kk}, rng);
    Tensor c1({m, n}), c2({m, n});

    k::matmul(a.ptr(), b.ptr(), c1.ptr(), m, kk, n);
    k::serial::matmul(a.ptr(), b.ptr(), c2.ptr(), m, kk, n);
    CHECK(c1.data == c2.data);

    k::matmul_nt(a.ptr(), bt.ptr(), c1.ptr(), m, kk, n);
    k::serial::matmul_nt(a.ptr(), bt.ptr(), c2.ptr(), m, kk, n);
    CHECK(c1.data == c2.data);

    Tensor at = randn({kk, m}, rng);
    c1.zero();
    c2.zero();
    k::matmul_tn(at.ptr(), b.ptr(), c1.ptr(), m, kk, n);
    k::serial::matmul_tn(at.ptr(), b.ptr(), c2.ptr(), m, kk, n);
    CHECK(c1.data == c2.data);

    const int rows = 19, dim = 31;
    Tensor x = randn({rows, dim}, rng);
    Tensor y1({rows, dim}), y2({rows, dim}), mu1({rows}), mu2({rows}), rs1({rows}), rs2({rows});
    k::layernorm_forward(x.ptr(), y1.ptr(), mu1.ptr(), rs1.ptr(), rows, dim);
    k::serial::layernorm_forward(x.ptr(), y2.ptr(), mu2.ptr(), rs2.ptr(), rows, dim);
    CHECK(y1.data == y2.data);

    Tensor g1({rows, dim}), g2({rows, dim});
    k::gelu_forward(x.ptr(), g1.ptr(), x.numel());
    k::serial::gelu_forward(x.ptr(), g2.ptr(), x.numel());
    CHECK(g1.data == g2.data);

    const int batch = 3, t = 11, heads = 4, d = 16;
    Tensor qkv = randn({batch * t, 3 * d}, rng);
    Tensor o1({batch * t, d}), o2({batch * t, d}), p1({batch, heads, t, t}), p2({batch, heads, t, t});
    k::attention_forward(qkv.ptr(), o1.ptr(), p1.ptr(), batch, t, heads, d);
    k::serial::attention_forward(qkv.ptr(), o2.ptr(), p2.ptr(), batch, t, heads, d);
    CHECK(o1.data == o2.data);
    CHECK(p1.data == p2.data);

    const int h = 13, w = 9, cin = 3, cout = 5;
    Tensor img = randn({h, w, cin}, rng), wt = randn({cout, cin, 3, 3}, rng), bias = randn({cout}, rng);
    Tensor v1({h, w, cout}), v2({h, w, cout});
    k::conv3x3_forward(img.ptr(), wt.ptr(), bias.ptr(), v1.ptr(), h, w, cin, cout, 1);
    k::serial::conv3x3_forward(img.ptr(), wt.ptr(), bias.ptr(), v2.ptr(), h, w, cin, cout, 1);
    CHECK(v1.data == v2.data);
}

TEST_CASE("layernorm rows come out zero-mean unit-variance") {
    Rng rng(3);
    const int rows = 8, dim = 64;
    Tensor x = randn({rows, dim}, rng);
    Tensor y({rows, dim}), mu({rows}), rs({rows});
    k::layernorm_forward(x.ptr(), y.ptr(), mu.ptr(), rs.ptr(), rows, dim);
    for (int i = 0; i < rows; ++i) {
        double m = 0, v = 0;
        for (int j = 0; j < dim; ++j) m += y[i * dim + j];
        m /= dim;
        for (int j = 0; j < dim; ++j) v += (y[i * dim + j] - m) * (y[i * dim + j] - m);
        v /= dim;
        CHECK(std::abs(m) < 1e-12);
        CHECK(v == doctest::Approx(1.0).epsilon(1e-4));
    }
}

TEST_CASE("layernorm backward matches finite differences") {
    Rng rng(11);
    const int rows = 4, dim = 10;
    Tensor x = randn({rows, dim}, rng);
    Tensor dy = randn({rows, dim}, rng);
    Tensor y({rows, dim}), mu({rows}), rs({rows}), dx({rows, dim});
    k::layernorm_forward(x.ptr(), y.ptr(), mu.ptr(), rs.ptr(), rows, dim);
    k::layernorm_backward(dy.ptr(), x.ptr(), mu.ptr(), rs.ptr(), dx.ptr(), rows, dim);

    auto loss = [&](const Tensor& xin) {
        Tensor yy({rows, dim}), m({rows}), r({rows});
        k::layernorm_forward(xin.ptr(), yy.ptr(), m.ptr(), r.ptr(), rows, dim);
        double s = 0;
        for (std::int64_t i = 0; i < yy.numel(); ++i) s += yy[i] * dy[i];
        return s;
    };
    const double h = 1e-6;
    for (std::int64_t i = 0; i < x.numel(); i += 7) {
        Tensor xp = x, xm = x;
        xp[i] += h;
        xm[i] -= h;
        double fd = (loss(xp) - loss(xm)) / (2 * h);
        CHECK(dx[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("activation backward passes match finite differences") {
    Rng rng(5);
    const std::int64_t n = 64;
    Tensor x = randn({n}, rng), dy = randn({n}, rng);
    const double h = 1e-6;

    Tensor dx({n});
    k::gelu_backward(x.ptr(), dy.ptr(), dx.ptr(), n);
    for (std::int64_t i = 0; i < n; i += 5) {
        double yp, ym;
        double xp = x[i] + h, xm = x[i] - h;
        k::gelu_forward(&xp, &yp, 1);
        k::gelu_forward(&xm, &ym, 1);
        CHECK(dx[i] == doctest::Approx(dy[i] * (yp - ym) / (2 * h)).epsilon(1e-5));
    }

    k::silu_backward(x.ptr(), dy.ptr(), dx.ptr(), n);
    for (std::int64_t i = 0; i < n; i += 5) {
        double yp, ym;
        double xp = x[i] + h, xm = x[i] - h;
        k::silu_forward(&xp, &yp, 1);
        k::silu_forward(&xm, &ym, 1);
        CHECK(dx[i] == doctest::Approx(dy[i] * (yp - ym) / (2 * h)).epsilon(1e-5));
    }
}

TEST_CASE("softmax rows are normalized and attention probs too") {
    Rng rng(9);
    Tensor x = randn({6, 12}, rng);
    k::softmax_rows(x.ptr(), 6, 12);
    for (int i = 0; i < 6; ++i) {
        double s = 0;
        for (int j = 0; j < 12; ++j) s += x[i * 12 + j];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }

    const int batch = 2, t = 4, heads = 2, d = 8;
    Tensor qkv = randn({batch * t, 3 * d}, rng);
    Tensor o({batch * t, d}), p({batch, heads, t, t});
    k::attention_forward(qkv.ptr(), o.ptr(), p.ptr(), batch, t, heads, d);
    for (int r = 0; r < batch * heads * t; ++r) {
        double s = 0;
        for (int j = 0; j < t; ++j) s += p[r * t + j];
        CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
    }
}

TEST_CASE("attention matches a direct single-head evaluation") {
    Rng rng(21);
    const int t = 5, d = 4;
    Tensor qkv = randn({t, 3 * d}, rng);
    Tensor o({t, d}), p({1, 1, t, t});
    k::attention_forward(qkv.ptr(), o.ptr(), p.ptr(), 1, t, 1, d);

    for (int i = 0; i < t; ++i) {
        std::vector<double> s(t);
        double mx = -1e300;
        for (int j = 0; j < t; ++j) {
            double acc = 0;
            for (int q = 0; q < d; ++q) acc += qkv[i * 3 * d + q] * qkv[j * 3 * d + d + q];
            s[j] = acc / std::sqrt(static_cast<double>(d));
            mx = std::max(mx, s[j]);
        }
        double z = 0;
        for (int j = 0; j < t; ++j) z += std::exp(s[j] - mx);
        for (int q = 0; q < d; ++q) {
            double acc = 0;
            for (int j = 0; j < t; ++j)
                acc += std::exp(s[j] - mx) / z * qkv[j * 3 * d + 2 * d + q];
            CHECK(o[i * d + q] == doctest::Approx(acc).epsilon(1e-12));
        }
    }
}

TEST_CASE("attention backward matches finite differences") {
    Rng rng(13);
    const int batch = 2, t = 3, heads = 2, d = 4;
    Tensor qkv = randn({batch * t, 3 * d}, rng);
    Tensor dout = randn({batch * t, d}, rng);
    Tensor o({batch * t, d}), p({batch, heads, t, t});
    k::attention_forward(qkv.ptr(), o.ptr(), p.ptr(), batch, t, heads, d);
    Tensor dqkv({batch * t, 3 * d}), scratch({batch, heads, t, t});
    k::attention_backward(qkv.ptr(), p.ptr(), dout.ptr(), dqkv.ptr(), scratch.ptr(), batch, t, heads, d);

    auto loss = [&](const Tensor& q) {
        Tensor oo({batch * t, d}), pp({batch, heads, t, t});
        k::attention_forward(q.ptr(), oo.ptr(), pp.ptr(), batch, t, heads, d);
        double s = 0;
        for (std::int64_t i = 0; i < oo.numel(); ++i) s += oo[i] * dout[i];
        return s;
    };
    const double h = 1e-6;
    for (std::int64_t i = 0; i < qkv.numel(); i += 3) {
        Tensor qp = qkv, qm = qkv;
        qp[i] += h;
        qm[i] -= h;
        double fd = (loss(qp) - loss(qm)) / (2 * h);
        CHECK(dqkv[i] == doctest::Approx(fd).epsilon(2e-4));
    }
}

TEST_CASE("conv3x3 stride-2 input gradient matches finite differences") {
    Rng rng(17);
    const int h = 8, w = 6, cin = 2, cout = 3;
    Tensor x = randn({h, w, cin}, rng), wt = randn({cout, cin, 3, 3}, rng), b = randn({cout}, rng);
    Tensor y({(h + 1) / 2, (w + 1) / 2, cout});
    k::conv3x3_forward(x.ptr(), wt.ptr(), b.ptr(), y.ptr(), h, w, cin, cout, 2);

    Tensor dy(y.shape);
    for (auto& v : dy.data) v = rng.normal();
    Tensor dx({h, w, cin});
    k::conv3x3_backward_input(dy.ptr(), wt.ptr(), dx.ptr(), h, w, cin, cout, 2);

    auto loss = [&](const Tensor& xin) {
        Tensor yy(y.shape);
        k::conv3x3_forward(xin.ptr(), wt.ptr(), b.ptr(), yy.ptr(), h, w, cin, cout, 2);
        double s = 0;
        for (std::int64_t i = 0; i < yy.numel(); ++i) s += yy[i] * dy[i];
        return s;
    };
    const double step = 1e-6;
    for (std::int64_t i = 0; i < x.numel(); i += 5) {
        Tensor xp = x, xm = x;
        xp[i] += step;
        xm[i] -= step;
        double fd = (loss(xp) - loss(xm)) / (2 * step);
        CHECK(dx[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}
