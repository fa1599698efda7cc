#include "fb/evaluation.hpp"

#include <cmath>
#include <stdexcept>

#include "fb/rng.hpp"

namespace fb {

// ============================================================================
// Feature maps
// ============================================================================

Tensor DownsampleFeatures::extract(const Tensor& image) const {
    const int h = static_cast<int>(image.dim(0)), w = static_cast<int>(image.dim(1));
    const int c = static_cast<int>(image.dim(2));
    if (c != channels_) throw std::invalid_argument("downsample features: channel mismatch");
    if (h % out_hw_ != 0 || w % out_hw_ != 0)
        throw std::invalid_argument("downsample features: size not divisible by output grid");
    const int by = h / out_hw_, bx = w / out_hw_;
    Tensor out({static_cast<std::int64_t>(out_hw_) * out_hw_ * c});
    for (int oy = 0; oy < out_hw_; ++oy)
        for (int ox = 0; ox < out_hw_; ++ox)
            for (int q = 0; q < c; ++q) {
                double acc = 0;
                for (int dy = 0; dy < by; ++dy)
                    for (int dx = 0; dx < bx; ++dx)
                        acc += image[((static_cast<std::int64_t>(oy * by + dy)) * w + ox * bx + dx) * c + q];
                out[(static_cast<std::int64_t>(oy) * out_hw_ + ox) * c + q] = acc / (by * bx);
            }
    return out;
}

Tensor RandomConvFeatures::extract(const Tensor& image) const {
    auto levels = ex_.features(image);
    Tensor out({dim()});
    std::int64_t off = 0;
    for (const auto& f : levels) {
        const int c = static_cast<int>(f.dim(2));
        const std::int64_t pos = f.numel() / c;
        for (int q = 0; q < c; ++q) {
            double acc = 0;
            for (std::int64_t p = 0; p < pos; ++p) acc += f[p * c + q];
            out[off + q] = acc / static_cast<double>(pos);
        }
        off += c;
    }
    return out;
}

// ============================================================================
// Feature statistics and Fréchet distance
// ============================================================================

FeatureStats feature_stats(const Tensor& samples, const FeatureMap& extractor) {
    const std::int64_t n = samples.dim(0);
    if (n < 2) throw std::invalid_argument("feature_stats: need at least 2 samples");
    const int f = extractor.dim();

    Tensor feats({n, f});
    Tensor img({samples.dim(1), samples.dim(2), samples.dim(3)});
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy(samples.ptr() + i * img.numel(), samples.ptr() + (i + 1) * img.numel(), img.ptr());
        Tensor v = extractor.extract(img);
        std::copy(v.ptr(), v.ptr() + f, feats.ptr() + i * f);
    }

    FeatureStats out;
    out.n = n;
    out.mean = Tensor({f});
    for (std::int64_t i = 0; i < n; ++i)
        for (int j = 0; j < f; ++j) out.mean[j] += feats[i * f + j];
    for (int j = 0; j < f; ++j) out.mean[j] /= static_cast<double>(n);

    out.cov = Tensor({f, f});
#pragma omp parallel for collapse(2) schedule(static)
    for (int a = 0; a < f; ++a)
        for (int b = 0; b < f; ++b) {
            double acc = 0;
            for (std::int64_t i = 0; i < n; ++i)
                acc += (feats[i * f + a] - out.mean[a]) * (feats[i * f + b] - out.mean[b]);
            out.cov[static_cast<std::int64_t>(a) * f + b] = acc / static_cast<double>(n - 1);
        }
    return out;
}

namespace {

// Cyclic Jacobi eigendecomposition of a symmetric matrix; a is destroyed,
// eigenvalues land in eig. Plenty for the small feature dims used here.
void jacobi_eigen(std::vector<double>& a, int n, std::vector<double>& eig,
                  std::vector<double>* vecs) {
    if (vecs) {
        vecs->assign(static_cast<std::size_t>(n) * n, 0.0);
        for (int i = 0; i < n; ++i) (*vecs)[static_cast<std::size_t>(i) * n + i] = 1.0;
    }
    for (int sweep = 0; sweep < 128; ++sweep) {
        double off = 0;
        for (int p = 0; p < n; ++p)
            for (int q = p + 1; q < n; ++q) off += a[static_cast<std::size_t>(p) * n + q] *
                                                   a[static_cast<std::size_t>(p) * n + q];
        if (off < 1e-26 * n * n) break;
        for (int p = 0; p < n; ++p) {
            for (int q = p + 1; q < n; ++q) {
                const double apq = a[static_cast<std::size_t>(p) * n + q];
                if (std::abs(apq) < 1e-300) continue;
                const double app = a[static_cast<std::size_t>(p) * n + p];
                const double aqq = a[static_cast<std::size_t>(q) * n + q];
                const double theta = (aqq - app) / (2.0 * apq);
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = a[static_cast<std::size_t>(k) * n + p];
                    const double akq = a[static_cast<std::size_t>(k) * n + q];
                    a[static_cast<std::size_t>(k) * n + p] = c * akp - s * akq;
                    a[static_cast<std::size_t>(k) * n + q] = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = a[static_cast<std::size_t>(p) * n + k];
                    const double aqk = a[static_cast<std::size_t>(q) * n + k];
                    a[static_cast<std::size_t>(p) * n + k] = c * apk - s * aqk;
                    a[static_cast<std::size_t>(q) * n + k] = s * apk + c * aqk;
                }
                if (vecs) {
                    for (int k = 0; k < n; ++k) {
                        const double vkp = (*vecs)[static_cast<std::size_t>(k) * n + p];
                        const double vkq = (*vecs)[static_cast<std::size_t>(k) * n + q];
                        (*vecs)[static_cast<std::size_t>(k) * n + p] = c * vkp - s * vkq;
                        (*vecs)[static_cast<std::size_t>(k) * n + q] = s * vkp + c * vkq;
                    }
                }
            }
        }
    }
    eig.resize(n);
    for (int i = 0; i < n; ++i) eig[i] = a[static_cast<std::size_t>(i) * n + i];
}

std::vector<double> symmetrized(const Tensor& m, int n) {
    std::vector<double> out(static_cast<std::size_t>(n) * n);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j)
            out[static_cast<std::size_t>(i) * n + j] =
                0.5 * (m[static_cast<std::int64_t>(i) * n + j] + m[static_cast<std::int64_t>(j) * n + i]);
    return out;
}

// sqrt of a symmetric PSD matrix; negative eigenvalues clipped at 0
std::vector<double> sqrtm_psd(std::vector<double> a, int n) {
    std::vector<double> eig, v;
    jacobi_eigen(a, n, eig, &v);
    std::vector<double> out(static_cast<std::size_t>(n) * n, 0.0);
    for (int k = 0; k < n; ++k) {
        const double s = eig[k] > 0.0 ? std::sqrt(eig[k]) : 0.0;
        if (s == 0.0) continue;
        for (int i = 0; i < n; ++i)
            for (int j = 0; j < n; ++j)
                out[static_cast<std::size_t>(i) * n + j] +=
                    s * v[static_cast<std::size_t>(i) * n + k] * v[static_cast<std::size_t>(j) * n + k];
    }
    return out;
}

}  // namespace

double frechet_distance(const FeatureStats& a, const FeatureStats& b) {
    if (a.mean.numel() != b.mean.numel())
        throw std::invalid_argument("frechet_distance: feature dimension mismatch");
    const int n = static_cast<int>(a.mean.numel());

    // identical stats are at distance zero by definition
    if (a.mean.data == b.mean.data && a.cov.data == b.cov.data) return 0.0;

    double mean_term = 0;
    for (int i = 0; i < n; ++i) {
        const double d = a.mean[i] - b.mean[i];
        mean_term += d * d;
    }

    std::vector<double> sa = symmetrized(a.cov, n);
    std::vector<double> sb = symmetrized(b.cov, n);
    double trace_ab = 0;
    for (int i = 0; i < n; ++i)
        trace_ab += sa[static_cast<std::size_t>(i) * n + i] + sb[static_cast<std::size_t>(i) * n + i];

    // Tr((Sa Sb)^{1/2}) = Tr((A^{1/2} Sb A^{1/2})^{1/2})
    std::vector<double> ra = sqrtm_psd(sa, n);
    std::vector<double> m(static_cast<std::size_t>(n) * n, 0.0), tmp(m.size(), 0.0);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0;
            for (int k = 0; k < n; ++k)
                acc += ra[static_cast<std::size_t>(i) * n + k] * sb[static_cast<std::size_t>(k) * n + j];
            tmp[static_cast<std::size_t>(i) * n + j] = acc;
        }
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            double acc = 0;
            for (int k = 0; k < n; ++k)
                acc += tmp[static_cast<std::size_t>(i) * n + k] * ra[static_cast<std::size_t>(k) * n + j];
            m[static_cast<std::size_t>(i) * n + j] = acc;
        }
    // symmetrize the product against roundoff before the eigen pass
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) {
            const double v = 0.5 * (m[static_cast<std::size_t>(i) * n + j] +
                                    m[static_cast<std::size_t>(j) * n + i]);
            m[static_cast<std::size_t>(i) * n + j] = v;
            m[static_cast<std::size_t>(j) * n + i] = v;
        }
    std::vector<double> eig;
    jacobi_eigen(m, n, eig, nullptr);
    double trace_sqrt = 0;
    for (double e : eig) trace_sqrt += e > 0.0 ? std::sqrt(e) : 0.0;

    return std::max(0.0, mean_term + trace_ab - 2.0 * trace_sqrt);
}

// ============================================================================
// Diversity score
// ============================================================================

RandomProjectionClassifier::RandomProjectionClassifier(std::uint64_t seed, int num_classes,
                                                       int channels)
    : channels_(channels) {
    Rng rng(seed);
    const int grid = 4;
    w_ = Tensor({num_classes, static_cast<std::int64_t>(grid) * grid * channels});
    b_ = Tensor({num_classes});
    for (auto& v : w_.data) v = rng.normal();
    for (auto& v : b_.data) v = 0.1 * rng.normal();
}

Tensor RandomProjectionClassifier::probs(const Tensor& image) const {
    DownsampleFeatures down(4, channels_);
    Tensor f = down.extract(image);
    const int k = num_classes();
    Tensor logits({k});
    for (int i = 0; i < k; ++i) {
        double acc = b_[i];
        for (std::int64_t j = 0; j < f.numel(); ++j) acc += w_[i * f.numel() + j] * f[j];
        logits[i] = acc;
    }
    double mx = logits[0];
    for (int i = 1; i < k; ++i) mx = std::max(mx, logits[i]);
    double sum = 0;
    for (int i = 0; i < k; ++i) {
        logits[i] = std::exp(logits[i] - mx);
        sum += logits[i];
    }
    for (int i = 0; i < k; ++i) logits[i] /= sum;
    return logits;
}

double diversity_score(const Tensor& samples, const Classifier& classifier) {
    const std::int64_t n = samples.dim(0);
    if (n < 1) throw std::invalid_argument("diversity_score: no samples");
    const int k = classifier.num_classes();

    std::vector<Tensor> ps;
    ps.reserve(n);
    Tensor img({samples.dim(1), samples.dim(2), samples.dim(3)});
    Tensor marginal({k});
    for (std::int64_t i = 0; i < n; ++i) {
        std::copy(samples.ptr() + i * img.numel(), samples.ptr() + (i + 1) * img.numel(), img.ptr());
        Tensor p = classifier.probs(img);
        if (p.numel() != k) throw std::invalid_argument("diversity_score: classifier output size");
        double sum = 0;
        for (int j = 0; j < k; ++j) {
            if (p[j] < 0.0) throw std::invalid_argument("diversity_score: negative probability");
            sum += p[j];
        }
        if (std::abs(sum - 1.0) > 1e-6)
            throw std::invalid_argument("diversity_score: probabilities must sum to 1");
        for (int j = 0; j < k; ++j) marginal[j] += p[j];
        ps.push_back(std::move(p));
    }
    for (int j = 0; j < k; ++j) marginal[j] /= static_cast<double>(n);

    double mean_kl = 0;
    for (const auto& p : ps) {
        double kl = 0;
        for (int j = 0; j < k; ++j)
            if (p[j] > 0.0) kl += p[j] * std::log(p[j] / marginal[j]);
        mean_kl += kl;
    }
    mean_kl /= static_cast<double>(n);
    return std::exp(mean_kl);
}

// ============================================================================
// Spectral profile
// ============================================================================

SpectralProfile spectral_profile(const Tensor& features, double cutoff) {
    if (features.ndim() != 3)
        throw std::invalid_argument("spectral_profile: expected rows x cols x channels");
    const int r = static_cast<int>(features.dim(0));
    const int c = static_cast<int>(features.dim(1));
    const int ch = static_cast<int>(features.dim(2));
    if (r < 2 || c < 2) throw std::invalid_argument("spectral_profile: degenerate map (need >= 2x2)");
    if (cutoff <= 0.0 || cutoff > 1.0) throw std::invalid_argument("spectral_profile: bad cutoff");

    // channel-averaged power spectrum via row-column DFT
    Tensor power({r, c});
    std::vector<double> re_rows(static_cast<std::size_t>(r) * c), im_rows(re_rows.size());
    for (int q = 0; q < ch; ++q) {
        // DFT along columns of each row
        for (int y = 0; y < r; ++y) {
            for (int v = 0; v < c; ++v) {
                double re = 0, im = 0;
                for (int x = 0; x < c; ++x) {
                    const double val = features[(static_cast<std::int64_t>(y) * c + x) * ch + q];
                    const double ang = -2.0 * M_PI * v * x / c;
                    re += val * std::cos(ang);
                    im += val * std::sin(ang);
                }
                re_rows[static_cast<std::size_t>(y) * c + v] = re;
                im_rows[static_cast<std::size_t>(y) * c + v] = im;
            }
        }
        // DFT along rows
        for (int u = 0; u < r; ++u) {
            for (int v = 0; v < c; ++v) {
                double re = 0, im = 0;
                for (int y = 0; y < r; ++y) {
                    const double ang = -2.0 * M_PI * u * y / r;
                    const double cr = std::cos(ang), ci = std::sin(ang);
                    re += re_rows[static_cast<std::size_t>(y) * c + v] * cr -
                          im_rows[static_cast<std::size_t>(y) * c + v] * ci;
                    im += re_rows[static_cast<std::size_t>(y) * c + v] * ci +
                          im_rows[static_cast<std::size_t>(y) * c + v] * cr;
                }
                power[static_cast<std::int64_t>(u) * c + v] += (re * re + im * im) / ch;
            }
        }
    }

    SpectralProfile out;
    out.cutoff = cutoff;
    out.radial_energy.assign(kSpectralBins, 0.0);
    const double r_max = std::sqrt(static_cast<double>((r / 2) * (r / 2) + (c / 2) * (c / 2)));
    double low = 0, high = 0, total = 0;
    for (int u = 0; u < r; ++u) {
        const int du = std::min(u, r - u);
        for (int v = 0; v < c; ++v) {
            const int dv = std::min(v, c - v);
            const double f = std::sqrt(static_cast<double>(du * du + dv * dv)) / r_max;
            const double e = power[static_cast<std::int64_t>(u) * c + v];
            const int bin = std::min(kSpectralBins - 1,
                                     static_cast<int>(std::lround(f * (kSpectralBins - 1))));
            out.radial_energy[bin] += e;
            total += e;
            if (f <= cutoff)
                low += e;
            else
                high += e;
        }
    }
    out.total_energy = total;
    if (total > 0) {
        out.low_ratio = low / total;
        out.high_ratio = high / total;
    } else {
        out.low_ratio = 1.0;  // all-zero map: define as pure DC
        out.high_ratio = 0.0;
    }
    return out;
}

}  // namespace fb
