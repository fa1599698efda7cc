#include "fb/losses.hpp"

#include <cmath>

#include "fb/kernels.hpp"
#include "fb/rng.hpp"

namespace fb {

namespace {
constexpr double kNormEps = 1e-10;

bool finite(double v) { return std::isfinite(v); }
}  // namespace

// ============================================================================
// Flow-matching loss
// ============================================================================

double fm_loss(const Tensor& x_pred, const Tensor& x, double t, const VelocityClipConfig& clip) {
    require_same_shape(x_pred, x, "fm_loss");
    if (t <= 0.0 || t >= 1.0) throw std::invalid_argument("fm_loss: t must be inside (0, 1)");
    const double d = std::max(1.0 - t, clip.min_one_minus_t);
    const std::int64_t n = x.numel();
    double acc = 0.0;
    for (std::int64_t i = 0; i < n; ++i) {
        double r = x_pred[i] - x[i];
        acc += r * r;
    }
    return acc / static_cast<double>(n) / (d * d);
}

double fm_loss_batch(const Tensor& x_pred, const Tensor& x, const std::vector<double>& ts,
                     const VelocityClipConfig& clip, Tensor* d_x_pred) {
    require_same_shape(x_pred, x, "fm_loss");
    const int batch = static_cast<int>(ts.size());
    if (x.dim(0) != batch) throw std::invalid_argument("fm_loss: batch size mismatch");
    const std::int64_t per = x.numel() / batch;

    double total = 0.0;
    for (int b = 0; b < batch; ++b) {
        if (ts[b] <= 0.0 || ts[b] >= 1.0)
            throw std::invalid_argument("fm_loss: t must be inside (0, 1)");
        const double d = std::max(1.0 - ts[b], clip.min_one_minus_t);
        const double* xp = x_pred.ptr() + static_cast<std::int64_t>(b) * per;
        const double* xt = x.ptr() + static_cast<std::int64_t>(b) * per;
        double acc = 0.0;
        for (std::int64_t i = 0; i < per; ++i) {
            double r = xp[i] - xt[i];
            acc += r * r;
        }
        total += acc / static_cast<double>(per) / (d * d);
        if (d_x_pred) {
            double* g = d_x_pred->ptr() + static_cast<std::int64_t>(b) * per;
            const double w = 2.0 / (static_cast<double>(per) * batch * d * d);
            for (std::int64_t i = 0; i < per; ++i) g[i] += w * (xp[i] - xt[i]);
        }
    }
    return total / batch;
}

// ============================================================================
// Perceptual loss
// ============================================================================

std::vector<Tensor> IdentityExtractor::features(const Tensor& image) const {
    return {image};
}

void IdentityExtractor::features_backward(const Tensor&, const std::vector<Tensor>& d_feats,
                                          Tensor& d_image) const {
    for (std::int64_t i = 0; i < d_image.numel(); ++i) d_image[i] += d_feats[0][i];
}

RandomConvExtractor::RandomConvExtractor(std::uint64_t seed, int in_channels) : cin_(in_channels) {
    Rng rng(seed);
    auto init = [&rng](Tensor& w, int fan_in) {
        const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
        for (auto& v : w.data) v = s * rng.normal();
    };
    w1_ = Tensor({8, cin_, 3, 3});
    b1_ = Tensor({8});
    w2_ = Tensor({16, 8, 3, 3});
    b2_ = Tensor({16});
    w3_ = Tensor({32, 16, 3, 3});
    b3_ = Tensor({32});
    init(w1_, cin_ * 9);
    init(b1_, cin_ * 9);
    init(w2_, 8 * 9);
    init(b2_, 8 * 9);
    init(w3_, 16 * 9);
    init(b3_, 16 * 9);
}

std::vector<Tensor> RandomConvExtractor::features(const Tensor& image) const {
    if (image.ndim() != 3 || image.dim(2) != cin_)
        throw ExtractorError("random-conv extractor: unexpected input shape " + image.shape_str());
    const int h = static_cast<int>(image.dim(0)), w = static_cast<int>(image.dim(1));
    Tensor f1({h, w, 8});
    kernels::conv3x3_forward(image.ptr(), w1_.ptr(), b1_.ptr(), f1.ptr(), h, w, cin_, 8, 1);
    kernels::tanh_forward(f1.ptr(), f1.ptr(), f1.numel());
    const int h2 = (h + 1) / 2, w2 = (w + 1) / 2;
    Tensor f2({h2, w2, 16});
    kernels::conv3x3_forward(f1.ptr(), w2_.ptr(), b2_.ptr(), f2.ptr(), h, w, 8, 16, 2);
    kernels::tanh_forward(f2.ptr(), f2.ptr(), f2.numel());
    const int h3 = (h2 + 1) / 2, w3 = (w2 + 1) / 2;
    Tensor f3({h3, w3, 32});
    kernels::conv3x3_forward(f2.ptr(), w3_.ptr(), b3_.ptr(), f3.ptr(), h2, w2, 16, 32, 2);
    kernels::tanh_forward(f3.ptr(), f3.ptr(), f3.numel());
    return {std::move(f1), std::move(f2), std::move(f3)};
}

void RandomConvExtractor::features_backward(const Tensor& image, const std::vector<Tensor>& d_feats,
                                            Tensor& d_image) const {
    // recompute the stack; activations are cheap at this scale
    std::vector<Tensor> f = features(image);
    const int h = static_cast<int>(image.dim(0)), w = static_cast<int>(image.dim(1));
    const int h2 = (h + 1) / 2, w2 = (w + 1) / 2;

    // each level's post-tanh gradient folds its own loss term with the
    // contribution flowing back from the level above
    Tensor d3(f[2].shape);
    kernels::tanh_backward(f[2].ptr(), d_feats[2].ptr(), d3.ptr(), d3.numel());

    Tensor g2 = d_feats[1];
    kernels::conv3x3_backward_input(d3.ptr(), w3_.ptr(), g2.ptr(), h2, w2, 16, 32, 2);
    Tensor d2(f[1].shape);
    kernels::tanh_backward(f[1].ptr(), g2.ptr(), d2.ptr(), d2.numel());

    Tensor g1 = d_feats[0];
    kernels::conv3x3_backward_input(d2.ptr(), w2_.ptr(), g1.ptr(), h, w, 8, 16, 2);
    Tensor d1(f[0].shape);
    kernels::tanh_backward(f[0].ptr(), g1.ptr(), d1.ptr(), d1.numel());

    kernels::conv3x3_backward_input(d1.ptr(), w1_.ptr(), d_image.ptr(), h, w, cin_, 8, 1);
}

namespace {

// Per-position unit normalization across channels: u = f / sqrt(|f|^2 + eps).
void normalize_channels(const Tensor& f, Tensor& u) {
    const int c = static_cast<int>(f.dim(2));
    const std::int64_t pos = f.numel() / c;
    for (std::int64_t p = 0; p < pos; ++p) {
        const double* fp = f.ptr() + p * c;
        double* up = u.ptr() + p * c;
        double s = 0.0;
        for (int i = 0; i < c; ++i) s += fp[i] * fp[i];
        double inv = 1.0 / std::sqrt(s + kNormEps);
        for (int i = 0; i < c; ++i) up[i] = fp[i] * inv;
    }
}

// df = (du - f * <du, f> / (|f|^2 + eps)) / sqrt(|f|^2 + eps)
void normalize_channels_backward(const Tensor& f, const Tensor& du, Tensor& df) {
    const int c = static_cast<int>(f.dim(2));
    const std::int64_t pos = f.numel() / c;
    for (std::int64_t p = 0; p < pos; ++p) {
        const double* fp = f.ptr() + p * c;
        const double* dup = du.ptr() + p * c;
        double* dfp = df.ptr() + p * c;
        double s = 0.0, dot = 0.0;
        for (int i = 0; i < c; ++i) {
            s += fp[i] * fp[i];
            dot += dup[i] * fp[i];
        }
        const double se = s + kNormEps;
        const double inv = 1.0 / std::sqrt(se);
        for (int i = 0; i < c; ++i) dfp[i] = (dup[i] - fp[i] * dot / se) * inv;
    }
}

double perceptual_one(const Tensor& x_pred, const Tensor& x, const PerceptualExtractor& ex,
                      double grad_scale, Tensor* d_image) {
    std::vector<Tensor> fp, fx;
    try {
        fp = ex.features(x_pred);
        fx = ex.features(x);
    } catch (const ExtractorError&) {
        throw;
    } catch (const std::exception& e) {
        throw ExtractorError(std::string("perceptual extractor failed: ") + e.what());
    }
    if (fp.size() != fx.size()) throw ExtractorError("perceptual extractor: level count mismatch");

    double loss = 0.0;
    std::vector<Tensor> d_feats;
    if (d_image) d_feats.resize(fp.size());

    for (std::size_t lvl = 0; lvl < fp.size(); ++lvl) {
        require_same_shape(fp[lvl], fx[lvl], "perceptual_loss features");
        const std::int64_t n = fp[lvl].numel();
        if (ex.unit_normalized()) {
            Tensor up(fp[lvl].shape), ux(fx[lvl].shape);
            normalize_channels(fp[lvl], up);
            normalize_channels(fx[lvl], ux);
            double acc = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                double r = up[i] - ux[i];
                acc += r * r;
            }
            loss += acc / static_cast<double>(n);
            if (d_image) {
                Tensor du(fp[lvl].shape);
                const double w = grad_scale * 2.0 / static_cast<double>(n);
                for (std::int64_t i = 0; i < n; ++i) du[i] = w * (up[i] - ux[i]);
                d_feats[lvl] = Tensor(fp[lvl].shape);
                normalize_channels_backward(fp[lvl], du, d_feats[lvl]);
            }
        } else {
            double acc = 0.0;
            for (std::int64_t i = 0; i < n; ++i) {
                double r = fp[lvl][i] - fx[lvl][i];
                acc += r * r;
            }
            loss += acc / static_cast<double>(n);
            if (d_image) {
                d_feats[lvl] = Tensor(fp[lvl].shape);
                const double w = grad_scale * 2.0 / static_cast<double>(n);
                for (std::int64_t i = 0; i < n; ++i) d_feats[lvl][i] = w * (fp[lvl][i] - fx[lvl][i]);
            }
        }
    }
    if (d_image) ex.features_backward(x_pred, d_feats, *d_image);
    return loss;
}

Tensor slice_image(const Tensor& batch, int b) {
    Tensor img({batch.dim(1), batch.dim(2), batch.dim(3)});
    std::copy(batch.ptr() + static_cast<std::int64_t>(b) * img.numel(),
              batch.ptr() + static_cast<std::int64_t>(b + 1) * img.numel(), img.ptr());
    return img;
}

}  // namespace

double perceptual_loss(const Tensor& x_pred, const Tensor& x, const PerceptualExtractor& extractor) {
    require_same_shape(x_pred, x, "perceptual_loss");
    return perceptual_one(x_pred, x, extractor, 1.0, nullptr);
}

double perceptual_loss_batch(const Tensor& x_pred, const Tensor& x,
                             const PerceptualExtractor& extractor, double scale, Tensor* d_x_pred) {
    require_same_shape(x_pred, x, "perceptual_loss");
    const int batch = static_cast<int>(x.dim(0));
    double total = 0.0;
    for (int b = 0; b < batch; ++b) {
        Tensor ip = slice_image(x_pred, b), ix = slice_image(x, b);
        if (d_x_pred) {
            Tensor d_img({ip.shape});
            total += perceptual_one(ip, ix, extractor, scale / batch, &d_img);
            double* dst = d_x_pred->ptr() + static_cast<std::int64_t>(b) * d_img.numel();
            for (std::int64_t i = 0; i < d_img.numel(); ++i) dst[i] += d_img[i];
        } else {
            total += perceptual_one(ip, ix, extractor, 1.0, nullptr);
        }
    }
    return total / batch;
}

// ============================================================================
// iREPA alignment
// ============================================================================

PatchAverageEncoder::PatchAverageEncoder(std::uint64_t seed, int patch, int channels, int out_dim)
    : patch_(patch) {
    Rng rng(seed);
    w_ = Tensor({out_dim, channels});
    b_ = Tensor({out_dim});
    for (auto& v : w_.data) v = rng.normal();
    for (auto& v : b_.data) v = 0.1 * rng.normal();
}

TokenSequence PatchAverageEncoder::encode(const Tensor& image) const {
    const int h = static_cast<int>(image.dim(0)), w = static_cast<int>(image.dim(1));
    const int c = static_cast<int>(image.dim(2));
    if (h % patch_ != 0 || w % patch_ != 0)
        throw std::invalid_argument("patch-average encoder: image not divisible by patch");
    const int gr = h / patch_, gc = w / patch_;
    const int r = out_dim();
    TokenSequence out;
    out.rows = gr;
    out.cols = gc;
    out.data = Tensor({static_cast<std::int64_t>(gr) * gc, r});
    std::vector<double> mean(c);
    for (int py = 0; py < gr; ++py) {
        for (int px = 0; px < gc; ++px) {
            std::fill(mean.begin(), mean.end(), 0.0);
            for (int dy = 0; dy < patch_; ++dy)
                for (int dx = 0; dx < patch_; ++dx) {
                    const double* pix =
                        image.ptr() + ((static_cast<std::int64_t>(py * patch_ + dy)) * w + px * patch_ + dx) * c;
                    for (int q = 0; q < c; ++q) mean[q] += pix[q];
                }
            const double inv = 1.0 / (static_cast<double>(patch_) * patch_);
            double* tok = out.data.ptr() + (static_cast<std::int64_t>(py) * gc + px) * r;
            for (int j = 0; j < r; ++j) {
                double acc = b_[j];
                for (int q = 0; q < c; ++q) acc += w_[static_cast<std::int64_t>(j) * c + q] * mean[q] * inv;
                tok[j] = acc;
            }
        }
    }
    return out;
}

IrepaProjector::IrepaProjector(int in_dim, int out_dim, std::uint64_t seed) {
    Rng rng(seed);
    w = Tensor({out_dim, in_dim});
    b = Tensor({out_dim});
    gw = Tensor({out_dim, in_dim});
    gb = Tensor({out_dim});
    const double s = 1.0 / std::sqrt(static_cast<double>(in_dim));
    for (auto& v : w.data) v = s * rng.normal();
}

void IrepaProjector::zero_grads() {
    gw.zero();
    gb.zero();
}

namespace {

// Cosine alignment over flat token matrices [n, D] vs [n, R].
double irepa_flat(const double* tapped, const double* reference, IrepaProjector* proj_mut,
                  const IrepaProjector& proj, std::int64_t n, int d, int r, double scale,
                  double* d_tapped) {
    double loss = 0.0;
    std::vector<double> p(r), dp(r);
    for (std::int64_t i = 0; i < n; ++i) {
        const double* ti = tapped + i * d;
        const double* ri = reference + i * r;
        for (int j = 0; j < r; ++j) {
            double acc = proj.b[j];
            for (int q = 0; q < d; ++q) acc += proj.w[static_cast<std::int64_t>(j) * d + q] * ti[q];
            p[j] = acc;
        }
        double pp = 0.0, rr = 0.0, pr = 0.0;
        for (int j = 0; j < r; ++j) {
            pp += p[j] * p[j];
            rr += ri[j] * ri[j];
            pr += p[j] * ri[j];
        }
        if (pp == 0.0 || rr == 0.0)
            throw std::domain_error("irepa_loss: zero-norm token (degenerate input)");
        const double np = std::sqrt(pp), nr = std::sqrt(rr);
        const double cos = pr / (np * nr);
        loss += 1.0 - cos;

        if (proj_mut) {
            // d(loss_i)/dp = -(ref/(|p||r|) - cos * p/|p|^2)
            const double w = scale / static_cast<double>(n);
            for (int j = 0; j < r; ++j)
                dp[j] = -w * (ri[j] / (np * nr) - cos * p[j] / pp);
            for (int j = 0; j < r; ++j) {
                proj_mut->gb[j] += dp[j];
                double* gw = proj_mut->gw.ptr() + static_cast<std::int64_t>(j) * d;
                for (int q = 0; q < d; ++q) gw[q] += dp[j] * ti[q];
            }
            if (d_tapped) {
                double* dt = d_tapped + i * d;
                for (int j = 0; j < r; ++j) {
                    const double* wj = proj.w.ptr() + static_cast<std::int64_t>(j) * d;
                    for (int q = 0; q < d; ++q) dt[q] += dp[j] * wj[q];
                }
            }
        }
    }
    return loss / static_cast<double>(n);
}

}  // namespace

double irepa_loss(const TokenSequence& tapped, const TokenSequence& reference,
                  const IrepaProjector& projector) {
    if (tapped.length() != reference.length())
        throw std::invalid_argument("irepa_loss: token count mismatch");
    if (tapped.width() != projector.in_dim() || reference.width() != projector.out_dim())
        throw std::invalid_argument("irepa_loss: width mismatch with projector");
    return irepa_flat(tapped.data.ptr(), reference.data.ptr(), nullptr, projector,
                      tapped.length(), tapped.width(), reference.width(), 1.0, nullptr);
}

double irepa_loss_batch(const Tensor& tapped, const Tensor& reference, IrepaProjector& projector,
                        double scale, Tensor* d_tapped) {
    if (tapped.dim(0) != reference.dim(0) || tapped.dim(1) != reference.dim(1))
        throw std::invalid_argument("irepa_loss: batch/token mismatch");
    const std::int64_t n = tapped.dim(0) * tapped.dim(1);
    return irepa_flat(tapped.ptr(), reference.ptr(), &projector, projector, n,
                      static_cast<int>(tapped.dim(2)), static_cast<int>(reference.dim(2)), scale,
                      d_tapped ? d_tapped->ptr() : nullptr);
}

// ============================================================================
// Total objective
// ============================================================================

LossReport total_loss(double fm, double irepa, double perceptual, const LossWeights& w) {
    if (!finite(fm)) throw std::runtime_error("total_loss: non-finite fm component");
    if (!finite(irepa)) throw std::runtime_error("total_loss: non-finite irepa component");
    if (!finite(perceptual)) throw std::runtime_error("total_loss: non-finite perceptual component");
    if (w.lambda_irepa < 0.0 || w.beta_lpips < 0.0)
        throw std::invalid_argument("total_loss: weights must be >= 0");
    LossReport r;
    r.fm = fm;
    r.irepa = irepa;
    r.perceptual = perceptual;
    r.total = fm + w.lambda_irepa * irepa + w.beta_lpips * perceptual;
    if (!finite(r.total)) throw std::runtime_error("total_loss: non-finite total");
    return r;
}

}  // namespace fb
