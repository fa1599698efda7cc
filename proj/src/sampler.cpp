#include "fb/sampler.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>

namespace fb {

void SamplerConfig::validate() const {
    if (steps < 1) throw std::invalid_argument("sampler: steps must be >= 1");
    if (cfg_scale < 1.0) throw std::invalid_argument("sampler: cfg_scale must be >= 1");
    if (!(t_lo >= 0.0 && t_lo < t_hi && t_hi <= 1.0))
        throw std::invalid_argument("sampler: interval must satisfy 0 <= t_lo < t_hi <= 1");
    if (clip.min_one_minus_t <= 0.0 || clip.min_one_minus_t >= 1.0)
        throw std::invalid_argument("sampler: clip must be in (0, 1)");
}

static bool all_finite(const Tensor& t) {
    for (double v : t.data)
        if (!std::isfinite(v)) return false;
    return true;
}

Tensor velocity_field(const XPredictor& model, const Tensor& z, double t,
                      const std::vector<int>& cls, double w, double t_lo, double t_hi,
                      const VelocityClipConfig& clip, long* nfe) {
    if (t < 0.0 || t >= 1.0)
        throw std::invalid_argument("velocity_field: t must lie in [0, 1)");
    std::vector<double> ts(cls.size(), t);

    Tensor x_c = model.predict(z, ts, cls);
    if (nfe) ++*nfe;
    Tensor v_c = x_to_velocity(x_c, z, t, clip);
    if (w == 1.0 || t < t_lo || t > t_hi) return v_c;

    std::vector<int> null_cls(cls.size(), model.null_class());
    Tensor x_u = model.predict(z, ts, null_cls);
    if (nfe) ++*nfe;
    Tensor v_u = x_to_velocity(x_u, z, t, clip);
    Tensor out(v_c.shape);
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < out.numel(); ++i) out[i] = v_u[i] + w * (v_c[i] - v_u[i]);
    return out;
}

Tensor heun_step(const VelocityFn& f, const Tensor& z, double t, double dt) {
    if (dt <= 0.0) throw std::invalid_argument("heun_step: dt must be positive");
    if (t + dt > 1.0 + 1e-12) throw std::invalid_argument("heun_step: t + dt exceeds 1");

    Tensor k1 = f(z, t);
    if (!all_finite(k1)) throw std::runtime_error("heun_step: non-finite velocity at t");

    const bool last = std::abs(t + dt - 1.0) <= 1e-12;
    Tensor next(z.shape);
    if (last) {
        // f is undefined at t = 1; close the grid with an Euler step
        for (std::int64_t i = 0; i < next.numel(); ++i) next[i] = z[i] + dt * k1[i];
    } else {
        Tensor mid(z.shape);
        for (std::int64_t i = 0; i < mid.numel(); ++i) mid[i] = z[i] + dt * k1[i];
        Tensor k2 = f(mid, t + dt);
        if (!all_finite(k2)) throw std::runtime_error("heun_step: non-finite velocity at t + dt");
        for (std::int64_t i = 0; i < next.numel(); ++i)
            next[i] = z[i] + 0.5 * dt * (k1[i] + k2[i]);
    }
    if (!all_finite(next)) throw std::runtime_error("heun_step: non-finite state");
    return next;
}

Tensor sample(const XPredictor& model, const SamplerConfig& cfg, const std::vector<int>& class_ids,
              int image_size, int channels, SampleStats* stats) {
    cfg.validate();
    if (class_ids.empty()) throw std::invalid_argument("sample: no class ids given");

    const int batch = static_cast<int>(class_ids.size());
    const double s = noise_scale_for(image_size);
    Rng rng(cfg.seed);
    Tensor z({batch, image_size, image_size, channels});
    for (auto& v : z.data) v = s * rng.normal();

    long nfe = 0;
    VelocityFn f = [&](const Tensor& state, double t) {
        return velocity_field(model, state, t, class_ids, cfg.cfg_scale, cfg.t_lo, cfg.t_hi,
                              cfg.clip, &nfe);
    };

    const double dt = 1.0 / cfg.steps;
    for (int i = 0; i < cfg.steps; ++i) {
        const double t = static_cast<double>(i) / cfg.steps;
        try {
            z = heun_step(f, z, t, (i == cfg.steps - 1) ? 1.0 - t : dt);
        } catch (const std::runtime_error& e) {
            throw std::runtime_error("sample: aborted at step " + std::to_string(i) + ": " + e.what());
        }
    }
    for (auto& v : z.data) v = std::clamp(v, -1.0, 1.0);
    if (stats) stats->nfe = nfe;
    return z;
}

Tensor sample(const Model& model, const SamplerConfig& cfg, const std::vector<int>& class_ids,
              SampleStats* stats) {
    ModelPredictor pred(model);
    return sample(pred, cfg, class_ids, model.config().image_size, model.config().channels, stats);
}

std::vector<double> default_cfg_scales() {
    std::vector<double> s;
    for (double w = 1.0; w <= 4.0 + 1e-9; w += 0.5) s.push_back(w);
    return s;
}

static void write_sweep_csv(const std::string& path, const std::vector<SweepRow>& rows) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cfg_sweep: cannot write " + path);
    out << "cfg_scale,t_lo,t_hi";
    std::vector<std::string> names;
    if (!rows.empty())
        for (const auto& [k, v] : rows.front().metrics) names.push_back(k);
    for (const auto& n : names) out << "," << n;
    out << "\n";
    out.precision(17);
    for (const auto& r : rows) {
        out << r.cfg_scale << "," << r.t_lo << "," << r.t_hi;
        for (const auto& n : names) out << "," << r.metrics.at(n);
        out << "\n";
    }
}

std::vector<SweepRow> cfg_sweep(const XPredictor& model, const SamplerConfig& base,
                                const std::vector<double>& scales,
                                const std::vector<std::pair<double, double>>& intervals,
                                const std::vector<int>& class_ids, int image_size, int channels,
                                const SweepEvalFn& eval_fn, const std::string& csv_path) {
    std::vector<SweepRow> rows;
    for (double w : scales) {
        for (const auto& [lo, hi] : intervals) {
            SamplerConfig cfg = base;
            cfg.cfg_scale = w;
            cfg.t_lo = lo;
            cfg.t_hi = hi;
            try {
                Tensor images = sample(model, cfg, class_ids, image_size, channels);
                SweepRow row{w, lo, hi, eval_fn(images)};
                rows.push_back(std::move(row));
            } catch (...) {
                // keep the partial table on disk, then surface the failure
                std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
                    return std::tie(a.cfg_scale, a.t_lo, a.t_hi) < std::tie(b.cfg_scale, b.t_lo, b.t_hi);
                });
                write_sweep_csv(csv_path, rows);
                throw;
            }
        }
    }
    std::sort(rows.begin(), rows.end(), [](const SweepRow& a, const SweepRow& b) {
        return std::tie(a.cfg_scale, a.t_lo, a.t_hi) < std::tie(b.cfg_scale, b.t_lo, b.t_hi);
    });
    write_sweep_csv(csv_path, rows);
    return rows;
}

}  // namespace fb
