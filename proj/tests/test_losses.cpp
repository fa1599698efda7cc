#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <vector>

#include "fb/losses.hpp"
#include "test_util.hpp"

using namespace fb;
using namespace fbtest;

TEST_CASE("fm_loss closed-form cases") {
    Rng rng(1);
    Tensor x = randn({4, 4, 3}, rng);
    CHECK(fm_loss(x, x, 0.5) == 0.0);

    Tensor xp = x;
    for (auto& v : xp.data) v += 1.0;
    CHECK(fm_loss(xp, x, 0.5) == doctest::Approx(4.0).epsilon(1e-12));

    Tensor bad({3, 3, 3});
    CHECK_THROWS_AS(fm_loss(bad, x, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(fm_loss(x, x, 0.0), std::invalid_argument);
    CHECK_THROWS_AS(fm_loss(x, x, 1.0), std::invalid_argument);
}

TEST_CASE("fm_loss equals mean-squared velocity error") {
    Rng rng(2);
    for (int trial = 0; trial < 100; ++trial) {
        double t = 0.01 + 0.94 * rng.uniform();
        double s = (trial % 2) ? 2.0 : 1.0;
        Tensor x = randn({4, 4, 3}, rng), eps = randn({4, 4, 3}, rng);
        Tensor x_pred = randn({4, 4, 3}, rng);
        auto smp = interpolate(x, eps, t, s);
        Tensor v_pred = x_to_velocity(x_pred, smp.z_t, t);
        double mse = 0;
        for (std::int64_t i = 0; i < v_pred.numel(); ++i) {
            double r = v_pred[i] - smp.v[i];
            mse += r * r;
        }
        mse /= v_pred.numel();
        double fm = fm_loss(x_pred, x, t);
        CHECK(std::abs(fm - mse) / std::max({fm, mse, 1e-12}) < 1e-6);
    }
}

TEST_CASE("fm_loss is non-negative and zero only at equality") {
    Rng rng(3);
    for (int trial = 0; trial < 50; ++trial) {
        Tensor x = randn({2, 2, 3}, rng), xp = randn({2, 2, 3}, rng);
        double t = 0.1 + 0.8 * rng.uniform();
        double v = fm_loss(xp, x, t);
        CHECK(v >= 0.0);
        CHECK((v == 0.0) == (xp.data == x.data));
    }
}

TEST_CASE("fm_loss_batch gradient matches finite differences") {
    Rng rng(4);
    const int b = 3;
    Tensor x = randn({b, 4, 4, 3}, rng), xp = randn({b, 4, 4, 3}, rng);
    std::vector<double> ts{0.2, 0.5, 0.97};
    VelocityClipConfig clip;
    Tensor g(xp.shape);
    double base = fm_loss_batch(xp, x, ts, clip, &g);
    CHECK(base > 0);
    const double h = 1e-6;
    for (std::int64_t i = 0; i < xp.numel(); i += 11) {
        Tensor p = xp, m = xp;
        p[i] += h;
        m[i] -= h;
        double fd = (fm_loss_batch(p, x, ts, clip) - fm_loss_batch(m, x, ts, clip)) / (2 * h);
        CHECK(g[i] == doctest::Approx(fd).epsilon(1e-4));
    }
}

TEST_CASE("perceptual loss is zero on identical inputs for any extractor") {
    Rng rng(5);
    Tensor x = randn({8, 8, 3}, rng);
    IdentityExtractor ident;
    RandomConvExtractor conv(7, 3);
    CHECK(perceptual_loss(x, x, ident) == 0.0);
    CHECK(perceptual_loss(x, x, conv) == 0.0);
}

TEST_CASE("identity extractor reduces the loss to plain MSE") {
    Rng rng(6);
    Tensor x = randn({4, 4, 3}, rng);
    Tensor xp = x;
    for (auto& v : xp.data) v += 1.0;
    IdentityExtractor ident;
    CHECK(perceptual_loss(xp, x, ident) == doctest::Approx(1.0).epsilon(1e-12));
}

// Straight-line re-implementation of the random-conv perceptual path: plain
// loops, no shared kernel code. Oracle for the test below.
namespace ref {

static void conv3x3(const std::vector<double>& x, int h, int w, int cin,
                    const std::vector<double>& wt, const std::vector<double>& b, int cout,
                    int stride, std::vector<double>& y, int& ho, int& wo) {
    ho = (h + stride - 1) / stride;
    wo = (w + stride - 1) / stride;
    y.assign(static_cast<std::size_t>(ho) * wo * cout, 0.0);
    for (int oy = 0; oy < ho; ++oy)
        for (int ox = 0; ox < wo; ++ox)
            for (int oc = 0; oc < cout; ++oc) {
                double acc = b[oc];
                for (int ky = 0; ky < 3; ++ky)
                    for (int kx = 0; kx < 3; ++kx) {
                        int iy = oy * stride + ky - 1, ix = ox * stride + kx - 1;
                        if (iy < 0 || iy >= h || ix < 0 || ix >= w) continue;
                        for (int ic = 0; ic < cin; ++ic)
                            acc += x[(static_cast<std::size_t>(iy) * w + ix) * cin + ic] *
                                   wt[((static_cast<std::size_t>(oc) * cin + ic) * 9) + ky * 3 + kx];
                    }
                y[(static_cast<std::size_t>(oy) * wo + ox) * cout + oc] = std::tanh(acc);
            }
}

static double level_mse_normalized(const std::vector<double>& a, const std::vector<double>& b,
                                   int c) {
    double acc = 0;
    const std::size_t pos = a.size() / c;
    for (std::size_t p = 0; p < pos; ++p) {
        double sa = 0, sb = 0;
        for (int i = 0; i < c; ++i) {
            sa += a[p * c + i] * a[p * c + i];
            sb += b[p * c + i] * b[p * c + i];
        }
        for (int i = 0; i < c; ++i) {
            double ua = a[p * c + i] / std::sqrt(sa + 1e-10);
            double ub = b[p * c + i] / std::sqrt(sb + 1e-10);
            acc += (ua - ub) * (ua - ub);
        }
    }
    return acc / static_cast<double>(a.size());
}

static double perceptual(const Tensor& xp, const Tensor& xx, std::uint64_t seed) {
    // weights drawn exactly as the extractor draws them
    Rng rng(seed);
    auto draw = [&rng](std::vector<double>& w, int n, int fan) {
        w.resize(n);
        for (auto& v : w) v = rng.normal() / std::sqrt(static_cast<double>(fan));
    };
    std::vector<double> w1, b1, w2, b2, w3, b3;
    draw(w1, 8 * 3 * 9, 3 * 9);
    draw(b1, 8, 3 * 9);
    draw(w2, 16 * 8 * 9, 8 * 9);
    draw(b2, 16, 8 * 9);
    draw(w3, 32 * 16 * 9, 16 * 9);
    draw(b3, 32, 16 * 9);

    auto stack = [&](const Tensor& img) {
        int h = static_cast<int>(img.dim(0)), w = static_cast<int>(img.dim(1));
        std::vector<double> x(img.data.begin(), img.data.end());
        std::vector<double> f1, f2, f3;
        int h1, w1o, h2, w2o, h3, w3o;
        conv3x3(x, h, w, 3, w1, b1, 8, 1, f1, h1, w1o);
        conv3x3(f1, h1, w1o, 8, w2, b2, 16, 2, f2, h2, w2o);
        conv3x3(f2, h2, w2o, 16, w3, b3, 32, 2, f3, h3, w3o);
        return std::array<std::vector<double>, 3>{f1, f2, f3};
    };
    auto fp = stack(xp), fx = stack(xx);
    return level_mse_normalized(fp[0], fx[0], 8) + level_mse_normalized(fp[1], fx[1], 16) +
           level_mse_normalized(fp[2], fx[2], 32);
}

}  // namespace ref

TEST_CASE("random-conv perceptual loss matches the straight-line reference") {
    // two fixed test images
    Tensor a({8, 8, 3}), b({8, 8, 3});
    for (std::int64_t i = 0; i < a.numel(); ++i) {
        a[i] = std::sin(0.37 * static_cast<double>(i)) * 0.8;
        b[i] = std::cos(0.21 * static_cast<double>(i)) * 0.6;
    }
    RandomConvExtractor ex(1234, 3);
    double got = perceptual_loss(a, b, ex);
    double want = ref::perceptual(a, b, 1234);
    CHECK(got == doctest::Approx(want).epsilon(1e-12));
    CHECK(got > 0.0);
}

TEST_CASE("perceptual batch gradient matches finite differences") {
    Rng rng(8);
    const int b = 2;
    Tensor x = randn({b, 8, 8, 3}, rng), xp = randn({b, 8, 8, 3}, rng);
    RandomConvExtractor ex(99, 3);
    Tensor g(xp.shape);
    perceptual_loss_batch(xp, x, ex, 1.0, &g);
    const double h = 1e-6;
    for (std::int64_t i = 0; i < xp.numel(); i += 37) {
        Tensor p = xp, m = xp;
        p[i] += h;
        m[i] -= h;
        double fd = (perceptual_loss_batch(p, x, ex) - perceptual_loss_batch(m, x, ex)) / (2 * h);
        CHECK(g[i] == doctest::Approx(fd).epsilon(2e-4));
    }
}

static TokenSequence tokens_from(const Tensor& data) {
    TokenSequence t;
    t.rows = static_cast<int>(data.dim(0));
    t.cols = 1;
    t.data = data;
    return t;
}

TEST_CASE("irepa_loss hits the three analytic anchors") {
    const int d = 4;
    IrepaProjector proj(d, d, 0);
    // identity projector
    proj.w.zero();
    proj.b.zero();
    for (int i = 0; i < d; ++i) proj.w[i * d + i] = 1.0;

    Rng rng(9);
    Tensor t = randn({3, d}, rng);
    CHECK(irepa_loss(tokens_from(t), tokens_from(t), proj) == doctest::Approx(0.0).epsilon(1e-12));

    // orthogonal per token
    Tensor a({2, d}), b({2, d});
    a[0] = 1.0;
    b[1] = 1.0;
    a[d + 1] = 2.0;
    b[d + 2] = 3.0;
    CHECK(irepa_loss(tokens_from(a), tokens_from(b), proj) == doctest::Approx(1.0).epsilon(1e-12));

    // anti-parallel
    Tensor c = a;
    for (auto& v : c.data) v = -v;
    CHECK(irepa_loss(tokens_from(a), tokens_from(c), proj) == doctest::Approx(2.0).epsilon(1e-12));

    Tensor z({1, d});
    CHECK_THROWS_AS(irepa_loss(tokens_from(z), tokens_from(z), proj), std::domain_error);
}

TEST_CASE("irepa_loss is invariant to positive per-token scaling") {
    const int d = 6, r = 3;
    IrepaProjector proj(d, r, 5);
    proj.b.zero();  // keeps projection homogeneous in its input
    Rng rng(10);
    Tensor tap = randn({5, d}, rng), ref = randn({5, r}, rng);
    double base = irepa_loss(tokens_from(tap), tokens_from(ref), proj);

    Tensor tap2 = tap, ref2 = ref;
    for (int i = 0; i < 5; ++i) {
        double st = 0.5 + 2.0 * rng.uniform(), sr = 0.5 + 2.0 * rng.uniform();
        for (int j = 0; j < d; ++j) tap2[i * d + j] *= st;
        for (int j = 0; j < r; ++j) ref2[i * r + j] *= sr;
    }
    CHECK(irepa_loss(tokens_from(tap2), tokens_from(ref2), proj) ==
          doctest::Approx(base).epsilon(1e-9));
}

TEST_CASE("irepa batch gradients match finite differences") {
    Rng rng(11);
    const int b = 2, l = 3, d = 5, r = 4;
    Tensor tap = randn({b, l, d}, rng), ref = randn({b, l, r}, rng);
    IrepaProjector proj(d, r, 77);
    Tensor dtap(tap.shape);
    proj.zero_grads();
    irepa_loss_batch(tap, ref, proj, 1.0, &dtap);

    auto eval = [&]() {
        IrepaProjector tmp = proj;
        return irepa_loss_batch(tap, ref, tmp, 0.0, nullptr);
    };
    const double h = 1e-6;
    for (std::int64_t i = 0; i < tap.numel(); ++i) {
        double keep = tap[i];
        tap[i] = keep + h;
        double up = eval();
        tap[i] = keep - h;
        double dn = eval();
        tap[i] = keep;
        CHECK(dtap[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-4));
    }
    for (std::int64_t i = 0; i < proj.w.numel(); ++i) {
        double keep = proj.w[i];
        proj.w[i] = keep + h;
        double up = eval();
        proj.w[i] = keep - h;
        double dn = eval();
        proj.w[i] = keep;
        CHECK(proj.gw[i] == doctest::Approx((up - dn) / (2 * h)).epsilon(1e-4));
    }
}

TEST_CASE("total_loss arithmetic and weight handling") {
    auto r = total_loss(1.0, 2.0, 3.0);
    CHECK(r.total == doctest::Approx(1.4).epsilon(1e-12));
    CHECK(r.fm == 1.0);
    CHECK(r.irepa == 2.0);
    CHECK(r.perceptual == 3.0);

    auto fm_only = total_loss(1.0, 2.0, 3.0, {0.0, 0.0});
    CHECK(fm_only.total == 1.0);

    // ablation row lambda=0.05, beta=0.5
    auto ab = total_loss(1.0, 2.0, 3.0, {0.05, 0.5});
    CHECK(ab.total == doctest::Approx(1.0 + 0.05 * 2.0 + 0.5 * 3.0).epsilon(1e-12));

    CHECK_THROWS_WITH_AS(total_loss(std::nan(""), 0, 0), doctest::Contains("fm"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(total_loss(0, std::nan(""), 0), doctest::Contains("irepa"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(total_loss(0, 0, INFINITY), doctest::Contains("perceptual"),
                         std::runtime_error);
}

TEST_CASE("total_loss is linear in each component") {
    Rng rng(12);
    LossWeights w{0.05, 0.1};
    for (int i = 0; i < 20; ++i) {
        double a = rng.uniform(), b = rng.uniform(), c = rng.uniform(), k = 1 + rng.uniform();
        double base = total_loss(a, b, c, w).total;
        CHECK(total_loss(k * a, b, c, w).total - base ==
              doctest::Approx((k - 1) * a).epsilon(1e-9));
        CHECK(total_loss(a, k * b, c, w).total - base ==
              doctest::Approx(w.lambda_irepa * (k - 1) * b).epsilon(1e-9));
        CHECK(total_loss(a, b, k * c, w).total - base ==
              doctest::Approx(w.beta_lpips * (k - 1) * c).epsilon(1e-9));
    }
}
