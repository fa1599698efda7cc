#pragma once

#include "fb/rng.hpp"
#include "fb/tensor.hpp"

namespace fb {

// logit(t) ~ Normal(mu, sigma^2)
struct TimeSamplerConfig {
    double mu = -0.8;
    double sigma = 0.8;

    bool operator==(const TimeSamplerConfig&) const = default;
};

// Divisor floor for the (1 - t) divisions in velocity conversion and the
// flow-matching loss weight.
struct VelocityClipConfig {
    double min_one_minus_t = 0.05;

    bool operator==(const VelocityClipConfig&) const = default;
};

// One training example of the forward process:
//   z_t = t * x + (1 - t) * s * eps,   v = x - s * eps
struct DiffusionSample {
    Tensor x;
    Tensor eps;   // standard normal draw, before scaling by noise_scale
    double t = 0.0;
    Tensor z_t;
    Tensor v;
    double noise_scale = 1.0;
};

inline double sigmoid(double g) { return 1.0 / (1.0 + std::exp(-g)); }

// Draws t = sigmoid(g), g ~ Normal(mu, sigma^2). Always lands in (0, 1).
double sample_time(Rng& rng, const TimeSamplerConfig& cfg = {});

// Resolution-dependent noise scale: s = image_size / 256.
double noise_scale_for(int image_size);

DiffusionSample interpolate(const Tensor& x, const Tensor& eps, double t, double s);

// (x_pred - z_t) / max(1 - t, clip)
Tensor x_to_velocity(const Tensor& x_pred, const Tensor& z_t, double t,
                     const VelocityClipConfig& clip = {});

}  // namespace fb
