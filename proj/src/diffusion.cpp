#include "fb/diffusion.hpp"

#include <stdexcept>

namespace fb {

double sample_time(Rng& rng, const TimeSamplerConfig& cfg) {
    if (cfg.sigma <= 0.0) throw std::invalid_argument("sample_time: sigma must be positive");
    double g = cfg.mu + cfg.sigma * rng.normal();
    return sigmoid(g);
}

double noise_scale_for(int image_size) {
    if (image_size < 1) throw std::invalid_argument("noise_scale_for: image_size must be >= 1");
    return static_cast<double>(image_size) / 256.0;
}

DiffusionSample interpolate(const Tensor& x, const Tensor& eps, double t, double s) {
    require_same_shape(x, eps, "interpolate");
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("interpolate: t outside [0, 1]");
    if (s <= 0.0) throw std::invalid_argument("interpolate: noise scale must be positive");

    DiffusionSample out;
    out.x = x;
    out.eps = eps;
    out.t = t;
    out.noise_scale = s;
    out.z_t = Tensor(x.shape);
    out.v = Tensor(x.shape);
    const std::int64_t n = x.numel();
    const double* xp = x.ptr();
    const double* ep = eps.ptr();
    double* zp = out.z_t.ptr();
    double* vp = out.v.ptr();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) {
        double se = s * ep[i];
        zp[i] = t * xp[i] + (1.0 - t) * se;
        vp[i] = xp[i] - se;
    }
    return out;
}

Tensor x_to_velocity(const Tensor& x_pred, const Tensor& z_t, double t,
                     const VelocityClipConfig& clip) {
    require_same_shape(x_pred, z_t, "x_to_velocity");
    if (t < 0.0 || t > 1.0) throw std::invalid_argument("x_to_velocity: t outside [0, 1]");
    if (clip.min_one_minus_t <= 0.0 || clip.min_one_minus_t >= 1.0)
        throw std::invalid_argument("x_to_velocity: clip must be in (0, 1)");

    const double inv = 1.0 / std::max(1.0 - t, clip.min_one_minus_t);
    Tensor v(x_pred.shape);
    const std::int64_t n = v.numel();
    const double* xp = x_pred.ptr();
    const double* zp = z_t.ptr();
    double* vp = v.ptr();
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < n; ++i) vp[i] = (xp[i] - zp[i]) * inv;
    return v;
}

}  // namespace fb
