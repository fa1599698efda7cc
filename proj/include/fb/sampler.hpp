#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "fb/diffusion.hpp"
#include "fb/model.hpp"
#include "fb/tensor.hpp"

namespace fb {

struct SamplerConfig {
    int steps = 50;
    double cfg_scale = 1.0;  // w; 1 disables guidance
    double t_lo = 0.1;
    double t_hi = 0.95;
    std::uint64_t seed = 0;
    VelocityClipConfig clip;

    void validate() const;
    bool operator==(const SamplerConfig&) const = default;
};

// The sampler's view of a network: x-prediction for a batch of states.
class XPredictor {
  public:
    virtual ~XPredictor() = default;
    virtual Tensor predict(const Tensor& z, const std::vector<double>& ts,
                           const std::vector<int>& cls) const = 0;
    virtual int null_class() const = 0;
};

// Adapter over Model with a forward-call counter for NFE accounting.
class ModelPredictor final : public XPredictor {
  public:
    explicit ModelPredictor(const Model& m) : m_(m) {}
    Tensor predict(const Tensor& z, const std::vector<double>& ts,
                   const std::vector<int>& cls) const override {
        ++calls_;
        return m_.forward(z, ts, cls).x_pred;
    }
    int null_class() const override { return m_.null_class(); }
    long calls() const { return calls_; }
    void reset_calls() { calls_ = 0; }

  private:
    const Model& m_;
    mutable long calls_ = 0;
};

// Interval-gated classifier-free guidance velocity. Inside [t_lo, t_hi] with
// w != 1 it blends v_u + w * (v_c - v_u); otherwise it returns the
// conditional velocity from a single forward. Counts predictor calls in nfe.
Tensor velocity_field(const XPredictor& model, const Tensor& z, double t,
                      const std::vector<int>& cls, double w, double t_lo, double t_hi,
                      const VelocityClipConfig& clip, long* nfe = nullptr);

using VelocityFn = std::function<Tensor(const Tensor&, double)>;

// One Heun step; the final grid step (t + dt == 1) falls back to Euler since
// the velocity field is undefined at t = 1. Rejects non-finite intermediates.
Tensor heun_step(const VelocityFn& f, const Tensor& z, double t, double dt);

struct SampleStats {
    long nfe = 0;  // model forward evaluations
};

// Deterministic generation: z_0 = s * N(0, I) seeded by cfg.seed, Heun over
// the linear grid, final state clamped to [-1, 1].
Tensor sample(const XPredictor& model, const SamplerConfig& cfg, const std::vector<int>& class_ids,
              int image_size, int channels = 3, SampleStats* stats = nullptr);

Tensor sample(const Model& model, const SamplerConfig& cfg, const std::vector<int>& class_ids,
              SampleStats* stats = nullptr);

// ---------------------------------------------------------------------------
// CFG sweep harness
// ---------------------------------------------------------------------------

struct SweepRow {
    double cfg_scale = 0.0;
    double t_lo = 0.0;
    double t_hi = 0.0;
    std::map<std::string, double> metrics;
};

using SweepEvalFn = std::function<std::map<std::string, double>(const Tensor& images)>;

// Cartesian product of scales x intervals, each sampled with the same fixed
// seed, evaluated by eval_fn and written as a sorted CSV with header
// (cfg_scale, t_lo, t_hi, metric...). On an eval failure the rows computed so
// far are still written before the error propagates.
std::vector<SweepRow> cfg_sweep(const XPredictor& model, const SamplerConfig& base,
                                const std::vector<double>& scales,
                                const std::vector<std::pair<double, double>>& intervals,
                                const std::vector<int>& class_ids, int image_size, int channels,
                                const SweepEvalFn& eval_fn, const std::string& csv_path);

// Default sweep grid over [1.0, 4.0].
std::vector<double> default_cfg_scales();

}  // namespace fb
