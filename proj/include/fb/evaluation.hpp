#pragma once

#include <cstdint>
#include <vector>

#include "fb/losses.hpp"
#include "fb/tensor.hpp"

namespace fb {

// ---------------------------------------------------------------------------
// Fréchet distance over pluggable features (toy-FID)
// ---------------------------------------------------------------------------

struct FeatureStats {
    Tensor mean;          // [F]
    Tensor cov;           // [F, F], symmetric
    std::int64_t n = 0;   // >= 2
};

// Image -> fixed-length feature vector.
class FeatureMap {
  public:
    virtual ~FeatureMap() = default;
    virtual Tensor extract(const Tensor& image) const = 0;
    virtual int dim() const = 0;
};

// Identity downsampler: average-pool to out_hw x out_hw and flatten.
class DownsampleFeatures final : public FeatureMap {
  public:
    DownsampleFeatures(int out_hw, int channels) : out_hw_(out_hw), channels_(channels) {}
    Tensor extract(const Tensor& image) const override;
    int dim() const override { return out_hw_ * out_hw_ * channels_; }

  private:
    int out_hw_, channels_;
};

// Seed-fixed random conv stack with per-level global average pooling.
class RandomConvFeatures final : public FeatureMap {
  public:
    RandomConvFeatures(std::uint64_t seed, int channels) : ex_(seed, channels) {}
    Tensor extract(const Tensor& image) const override;
    int dim() const override { return 8 + 16 + 32; }

  private:
    RandomConvExtractor ex_;
};

// Unbiased mean/covariance of extractor outputs over samples [N, H, W, C].
FeatureStats feature_stats(const Tensor& samples, const FeatureMap& extractor);

// |mu_a - mu_b|^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}); the matrix square root is
// taken by eigendecomposition with negative eigenvalues clipped at 0.
double frechet_distance(const FeatureStats& a, const FeatureStats& b);

// ---------------------------------------------------------------------------
// Diversity score over a pluggable classifier (toy-IS)
// ---------------------------------------------------------------------------

class Classifier {
  public:
    virtual ~Classifier() = default;
    virtual Tensor probs(const Tensor& image) const = 0;  // probability vector
    virtual int num_classes() const = 0;
};

// Downsampled pixels through a frozen random linear map and softmax.
class RandomProjectionClassifier final : public Classifier {
  public:
    RandomProjectionClassifier(std::uint64_t seed, int num_classes, int channels);
    Tensor probs(const Tensor& image) const override;
    int num_classes() const override { return static_cast<int>(w_.dim(0)); }

  private:
    Tensor w_, b_;
    int channels_;
};

// exp of the mean KL(p(y|x) || mean marginal); >= 1.
double diversity_score(const Tensor& samples, const Classifier& classifier);

// ---------------------------------------------------------------------------
// Radial spectral analysis (channel-averaged 2D DFT power)
// ---------------------------------------------------------------------------

struct SpectralProfile {
    std::vector<double> radial_energy;  // nearest-bin sums at f = k/32
    double low_ratio = 0.0;             // energy with f in [0, cutoff] / total
    double high_ratio = 0.0;
    double cutoff = 0.6;
    double total_energy = 0.0;          // unnormalized-DFT Parseval total
};

// features: rows x cols x channels feature map; rows, cols >= 2.
// f = r / r_max with r_max the corner lattice radius of the centered
// spectrum; the DC term belongs to the low band.
SpectralProfile spectral_profile(const Tensor& features, double cutoff = 0.6);

// Number of radial bins in SpectralProfile::radial_energy (bin width 1/32).
inline constexpr int kSpectralBins = 33;

}  // namespace fb
