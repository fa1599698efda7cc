#pragma once

#include <memory>
#include <stdexcept>
#include <vector>

#include "fb/diffusion.hpp"
#include "fb/model.hpp"
#include "fb/tensor.hpp"

namespace fb {

struct LossWeights {
    double lambda_irepa = 0.05;
    double beta_lpips = 0.1;

    bool operator==(const LossWeights&) const = default;
};

struct LossReport {
    double fm = 0.0;
    double irepa = 0.0;
    double perceptual = 0.0;
    double total = 0.0;
};

struct ExtractorError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// ---------------------------------------------------------------------------
// Flow-matching loss (v-loss as reweighted x-loss)
// ---------------------------------------------------------------------------

// mean((x_pred - x)^2) / max(1 - t, clip)^2
double fm_loss(const Tensor& x_pred, const Tensor& x, double t,
               const VelocityClipConfig& clip = {});

// Batch mean of per-example fm_loss; optionally writes d(loss)/d(x_pred).
double fm_loss_batch(const Tensor& x_pred, const Tensor& x, const std::vector<double>& ts,
                     const VelocityClipConfig& clip, Tensor* d_x_pred = nullptr);

// ---------------------------------------------------------------------------
// Perceptual loss over a pluggable feature extractor
// ---------------------------------------------------------------------------

class PerceptualExtractor {
  public:
    virtual ~PerceptualExtractor() = default;
    // Deterministic map from an H x W x C image to feature maps [h, w, c].
    virtual std::vector<Tensor> features(const Tensor& image) const = 0;
    // Accumulates d(image) given gradients w.r.t. each feature map.
    virtual void features_backward(const Tensor& image, const std::vector<Tensor>& d_feats,
                                   Tensor& d_image) const = 0;
    // When false, features are compared raw (no per-position unit norm).
    virtual bool unit_normalized() const { return true; }
};

// features = {image}, raw comparison; perceptual_loss degenerates to MSE
class IdentityExtractor final : public PerceptualExtractor {
  public:
    std::vector<Tensor> features(const Tensor& image) const override;
    void features_backward(const Tensor& image, const std::vector<Tensor>& d_feats,
                           Tensor& d_image) const override;
    bool unit_normalized() const override { return false; }
};

// Frozen seed-fixed multi-scale stack: three 3x3 tanh convolutions at
// strides 1, 2, 2 with widths 8, 16, 32.
class RandomConvExtractor final : public PerceptualExtractor {
  public:
    RandomConvExtractor(std::uint64_t seed, int in_channels);
    std::vector<Tensor> features(const Tensor& image) const override;
    void features_backward(const Tensor& image, const std::vector<Tensor>& d_feats,
                           Tensor& d_image) const override;

  private:
    int cin_;
    Tensor w1_, b1_, w2_, b2_, w3_, b3_;
};

// Sum over feature levels of the mean-squared difference of unit-normalized
// features; zero iff the feature stacks agree.
double perceptual_loss(const Tensor& x_pred, const Tensor& x, const PerceptualExtractor& extractor);

// Batch mean; accumulates scale * d(loss)/d(x_pred) when d_x_pred is given.
double perceptual_loss_batch(const Tensor& x_pred, const Tensor& x,
                             const PerceptualExtractor& extractor, double scale = 1.0,
                             Tensor* d_x_pred = nullptr);

// ---------------------------------------------------------------------------
// iREPA alignment loss
// ---------------------------------------------------------------------------

// Frozen reference encoder: image -> token sequence of width out_dim.
class RepresentationEncoder {
  public:
    virtual ~RepresentationEncoder() = default;
    virtual TokenSequence encode(const Tensor& image) const = 0;
    virtual int out_dim() const = 0;
};

// Patch means (one C-vector per patch) through a frozen random linear map.
class PatchAverageEncoder final : public RepresentationEncoder {
  public:
    PatchAverageEncoder(std::uint64_t seed, int patch, int channels, int out_dim);
    TokenSequence encode(const Tensor& image) const override;
    int out_dim() const override { return static_cast<int>(w_.dim(0)); }

  private:
    int patch_;
    Tensor w_, b_;  // [R, C], [R]
};

// Trainable per-token linear map D -> R feeding the cosine alignment.
struct IrepaProjector {
    Tensor w, b;    // [R, D], [R]
    Tensor gw, gb;

    IrepaProjector() = default;
    IrepaProjector(int in_dim, int out_dim, std::uint64_t seed);
    int in_dim() const { return static_cast<int>(w.dim(1)); }
    int out_dim() const { return static_cast<int>(w.dim(0)); }
    void zero_grads();
};

// mean over tokens of (1 - cos(projector(tapped_i), reference_i)); range [0, 2].
// Throws std::domain_error on zero-norm projected or reference vectors.
double irepa_loss(const TokenSequence& tapped, const TokenSequence& reference,
                  const IrepaProjector& projector);

// Batched ([B, L, D] vs [B, L, R]); accumulates scale * gradients into the
// projector and (optionally) scale * d(loss)/d(tapped).
double irepa_loss_batch(const Tensor& tapped, const Tensor& reference, IrepaProjector& projector,
                        double scale = 1.0, Tensor* d_tapped = nullptr);

// ---------------------------------------------------------------------------
// Total objective
// ---------------------------------------------------------------------------

// total = fm + lambda * irepa + beta * perceptual; rejects non-finite
// components naming the offender.
LossReport total_loss(double fm, double irepa, double perceptual, const LossWeights& w = {});

}  // namespace fb
