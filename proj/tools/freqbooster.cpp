// Command-line driver: train, sample, eval-fid, eval-spectra, sweep-cfg,
// inspect-ckpt. See README.md for the file formats each command emits.

#include <CLI11.hpp>
#include <json.hpp>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "fb/config.hpp"
#include "fb/evaluation.hpp"
#include "fb/image_io.hpp"
#include "fb/sampler.hpp"
#include "fb/trainer.hpp"

using json = nlohmann::json;
namespace fs = std::filesystem;
using namespace fb;

namespace {

constexpr std::uint64_t kFidFeatureSeed = 0xF1DF1DF1ull;
constexpr std::uint64_t kIsClassifierSeed = 0x15C1A55ull;

std::string resolve_out_dir(const ExperimentConfig& cfg, const std::string& flag_out) {
    if (!flag_out.empty()) return flag_out;
    if (const char* env = std::getenv("FREQBOOSTER_OUT"); env && *env) return env;
    return cfg.output_dir;
}

Dataset load_and_check_dataset(const ExperimentConfig& cfg) {
    Dataset ds = load_dataset(cfg.dataset);
    if (ds.num_classes > cfg.model.num_classes)
        throw ConfigError("dataset has " + std::to_string(ds.num_classes) +
                          " classes but model.num_classes is " +
                          std::to_string(cfg.model.num_classes));
    return ds;
}

std::vector<int> parse_class_list(const std::string& arg, int num_classes) {
    std::vector<int> out;
    std::stringstream ss(arg);
    std::string item;
    while (std::getline(ss, item, ',')) {
        int id = std::stoi(item);
        if (id < 0 || id >= num_classes)
            throw ConfigError("class id " + item + " out of range [0, " +
                              std::to_string(num_classes) + ")");
        out.push_back(id);
    }
    return out;
}

std::vector<int> round_robin_classes(int n, int num_classes) {
    std::vector<int> out(n);
    for (int i = 0; i < n; ++i) out[i] = i % num_classes;
    return out;
}

Model load_model_for_inference(const std::string& ckpt_path, const ExperimentConfig& cfg,
                               bool use_ema) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    if (ck.config_echo != encode_model_config(cfg.model))
        throw CheckpointConfigError("checkpoint model config does not match --config");
    return model_from_checkpoint(ck, use_ema);
}

double toy_fid(const Tensor& generated, const Dataset& ds, int n_ref, int channels) {
    RandomConvFeatures feats(kFidFeatureSeed, channels);
    std::vector<int> ref_idx;
    for (int i = 0; i < std::min<int>(n_ref, static_cast<int>(ds.images.size())); ++i)
        ref_idx.push_back(i);
    FeatureStats ref = feature_stats(ds.batch(ref_idx), feats);
    FeatureStats gen = feature_stats(generated, feats);
    return frechet_distance(ref, gen);
}

// ---------------------------------------------------------------------------
// train
// ---------------------------------------------------------------------------

int cmd_train(const std::string& config_path, const std::string& out_flag,
              const std::string& resume) {
    ExperimentConfig cfg = parse_config(config_path);
    const std::string out = resolve_out_dir(cfg, out_flag);
    fs::create_directories(out);

    Dataset ds = load_and_check_dataset(cfg);
    if (ds.skipped > 0)
        std::cerr << "warning: skipped " << ds.skipped << " unreadable dataset files\n";

    Trainer trainer(cfg.model, cfg.train, cfg.loss_weights, cfg.train.seed);
    if (!resume.empty()) trainer.load(resume);

    {
        std::ofstream echo(fs::path(out) / "config_echo.txt");
        echo << emit_config(cfg);
    }

    const fs::path metrics_path = fs::path(out) / "metrics.csv";
    const bool fresh = !fs::exists(metrics_path);
    std::ofstream metrics(metrics_path, std::ios::app);
    metrics.precision(17);
    if (fresh) metrics << "step,fm,irepa,perceptual,total,lr,wall_time\n";

    const auto t0 = std::chrono::steady_clock::now();
    while (trainer.step() < cfg.train.max_steps) {
        auto idx = trainer.next_batch_indices(static_cast<int>(ds.images.size()));
        Tensor images = ds.batch(idx);
        std::vector<int> labels(idx.size());
        for (std::size_t i = 0; i < idx.size(); ++i) labels[i] = ds.labels[idx[i]];

        LossReport rep = trainer.train_step(images, labels);
        const long step = trainer.step();
        const double wall = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

        if (step % cfg.train.log_every == 0 || step == cfg.train.max_steps) {
            metrics << step << "," << rep.fm << "," << rep.irepa << "," << rep.perceptual << ","
                    << rep.total << "," << cfg.train.lr << "," << wall << "\n";
            metrics.flush();
            std::cout << "step " << step << " total " << rep.total << " fm " << rep.fm << "\n";
        }
        if (cfg.train.ckpt_every > 0 && step % cfg.train.ckpt_every == 0)
            trainer.save((fs::path(out) / ("ckpt_step_" + std::to_string(step) + ".bin")).string());
    }
    trainer.save((fs::path(out) / "ckpt_final.bin").string());
    std::cout << "trained " << trainer.step() << " steps; checkpoints in " << out << "\n";
    return 0;
}

// ---------------------------------------------------------------------------
// sample
// ---------------------------------------------------------------------------

int cmd_sample(const std::string& config_path, const std::string& ckpt, const std::string& out_flag,
               std::int64_t seed, double cfg_scale, int steps, int n_samples,
               const std::string& class_list, bool live_weights) {
    ExperimentConfig cfg = parse_config(config_path);
    const std::string out = resolve_out_dir(cfg, out_flag);
    fs::create_directories(out);

    Model model = load_model_for_inference(ckpt, cfg, !live_weights);
    SamplerConfig sc = cfg.sampler;
    if (seed >= 0) sc.seed = static_cast<std::uint64_t>(seed);
    if (cfg_scale > 0) sc.cfg_scale = cfg_scale;
    if (steps > 0) sc.steps = steps;

    std::vector<int> classes = class_list.empty()
                                   ? round_robin_classes(n_samples, cfg.model.num_classes)
                                   : parse_class_list(class_list, cfg.model.num_classes);

    SampleStats stats;
    Tensor images = sample(model, sc, classes, &stats);

    json manifest;
    manifest["seed"] = sc.seed;
    manifest["cfg_scale"] = sc.cfg_scale;
    manifest["cfg_interval"] = {sc.t_lo, sc.t_hi};
    manifest["steps"] = sc.steps;
    manifest["nfe"] = stats.nfe;
    manifest["ema_weights"] = !live_weights;
    manifest["files"] = json::array();

    const std::int64_t per = images.numel() / images.dim(0);
    for (std::int64_t i = 0; i < images.dim(0); ++i) {
        Tensor img({images.dim(1), images.dim(2), images.dim(3)});
        std::copy(images.ptr() + i * per, images.ptr() + (i + 1) * per, img.ptr());
        char name[32];
        std::snprintf(name, sizeof name, "sample_%05lld.png", static_cast<long long>(i));
        write_png((fs::path(out) / name).string(), img);
        manifest["files"].push_back({{"file", name}, {"class_id", classes[i]}});
    }
    std::ofstream mf(fs::path(out) / "manifest.json");
    mf << manifest.dump(2) << "\n";
    std::cout << "wrote " << images.dim(0) << " samples to " << out << " (NFE " << stats.nfe << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval-fid
// ---------------------------------------------------------------------------

int cmd_eval_fid(const std::string& config_path, const std::string& ckpt,
                 const std::string& out_flag, int n_samples, std::int64_t seed, double cfg_scale,
                 int steps) {
    ExperimentConfig cfg = parse_config(config_path);
    const std::string out = resolve_out_dir(cfg, out_flag);
    fs::create_directories(out);

    Dataset ds = load_and_check_dataset(cfg);
    Model model = load_model_for_inference(ckpt, cfg, true);
    SamplerConfig sc = cfg.sampler;
    if (seed >= 0) sc.seed = static_cast<std::uint64_t>(seed);
    if (cfg_scale > 0) sc.cfg_scale = cfg_scale;
    if (steps > 0) sc.steps = steps;

    SampleStats stats;
    Tensor generated = sample(model, sc, round_robin_classes(n_samples, ds.num_classes), &stats);

    const double fid = toy_fid(generated, ds, n_samples, cfg.model.channels);
    RandomProjectionClassifier cls(kIsClassifierSeed, std::max(2, ds.num_classes),
                                   cfg.model.channels);
    const double is = diversity_score(generated, cls);

    std::ofstream csv(fs::path(out) / "fid.csv");
    csv.precision(17);
    csv << "metric,value\n";
    csv << "toy_fid," << fid << "\n";
    csv << "toy_is," << is << "\n";
    csv << "n_samples," << n_samples << "\n";
    csv << "nfe," << stats.nfe << "\n";
    std::cout << "toy_fid " << fid << " toy_is " << is << " (NFE " << stats.nfe << ")\n";
    return 0;
}

// ---------------------------------------------------------------------------
// eval-spectra
// ---------------------------------------------------------------------------

Tensor tokens_to_grid(const TokenSequence& seq) {
    Tensor grid({seq.rows, seq.cols, seq.width()});
    std::copy(seq.data.data.begin(), seq.data.data.end(), grid.data.begin());
    return grid;
}

int cmd_eval_spectra(const std::string& config_path, const std::string& ckpt,
                     const std::string& out_flag, const std::string& tap, double t, int n_samples,
                     bool plot) {
    ExperimentConfig cfg = parse_config(config_path);
    const std::string out = resolve_out_dir(cfg, out_flag);
    fs::create_directories(out);

    Dataset ds = load_and_check_dataset(cfg);
    Model model = load_model_for_inference(ckpt, cfg, true);

    std::vector<std::string> taps;
    if (tap == "all")
        taps = {"c_s", "decoder_output", "tapped"};
    else if (tap == "c_s" || tap == "decoder_output" || tap == "tapped")
        taps = {tap};
    else
        throw ConfigError("--tap must be one of c_s, decoder_output, tapped, all");

    const double s = noise_scale_for(cfg.model.image_size);
    Rng rng(cfg.sampler.seed);
    const int n = std::min<int>(n_samples, static_cast<int>(ds.images.size()));
    if (n < 1) throw ConfigError("eval-spectra: empty dataset");

    std::map<std::string, std::vector<double>> mean_energy;
    std::map<std::string, double> mean_low;
    for (const auto& name : taps) {
        mean_energy[name] = std::vector<double>(kSpectralBins, 0.0);
        mean_low[name] = 0.0;
    }

    for (int i = 0; i < n; ++i) {
        const Tensor& x = ds.images[i];
        Tensor eps(x.shape);
        for (auto& v : eps.data) v = rng.normal();
        DiffusionSample smp = interpolate(x, eps, t, s);

        TokenSequence z_tokens = patchify(smp.z_t, cfg.model.patch_size);
        ConditioningContext ctx{t, ds.labels[i], nullptr};
        DitOutput dit = model.dit_forward(z_tokens, ctx);
        TokenSequence up = model.bridge_up(dit.c_s);
        TokenSequence x_r = model.decoder_forward(z_tokens, up, ctx);

        for (const auto& name : taps) {
            const TokenSequence& seq = (name == "c_s") ? dit.c_s
                                       : (name == "tapped") ? dit.tapped
                                                            : x_r;
            SpectralProfile p = spectral_profile(tokens_to_grid(seq));
            for (int k = 0; k < kSpectralBins; ++k) mean_energy[name][k] += p.radial_energy[k] / n;
            mean_low[name] += p.low_ratio / n;
        }
    }

    for (const auto& name : taps) {
        std::ofstream csv(fs::path(out) / ("spectra_" + name + ".csv"));
        csv.precision(17);
        csv << "f_bin,energy\n";
        for (int k = 0; k < kSpectralBins; ++k)
            csv << static_cast<double>(k) / (kSpectralBins - 1) << "," << mean_energy[name][k] << "\n";
        std::cout << name << ": low_ratio " << mean_low[name] << " high_ratio "
                  << 1.0 - mean_low[name] << "\n";
    }
    if (plot) {
        std::vector<std::pair<std::string, std::vector<double>>> series;
        for (const auto& name : taps) series.emplace_back(name, mean_energy[name]);
        write_line_plot((fs::path(out) / "spectra.png").string(), series);
    }
    return 0;
}

// ---------------------------------------------------------------------------
// sweep-cfg
// ---------------------------------------------------------------------------

int cmd_sweep(const std::string& config_path, const std::string& ckpt, const std::string& out_flag,
              const std::string& scales_arg, const std::string& intervals_arg, int n_samples,
              int steps) {
    ExperimentConfig cfg = parse_config(config_path);
    const std::string out = resolve_out_dir(cfg, out_flag);
    fs::create_directories(out);

    Dataset ds = load_and_check_dataset(cfg);
    Model model = load_model_for_inference(ckpt, cfg, true);

    std::vector<double> scales;
    if (scales_arg.empty()) {
        scales = default_cfg_scales();
    } else {
        std::stringstream ss(scales_arg);
        std::string item;
        while (std::getline(ss, item, ',')) scales.push_back(std::stod(item));
    }
    std::vector<std::pair<double, double>> intervals;
    if (intervals_arg.empty()) {
        intervals = {{cfg.sampler.t_lo, cfg.sampler.t_hi}};
    } else {
        std::stringstream ss(intervals_arg);
        std::string item;
        while (std::getline(ss, item, ',')) {
            auto colon = item.find(':');
            if (colon == std::string::npos)
                throw ConfigError("--intervals expects lo:hi pairs separated by commas");
            intervals.emplace_back(std::stod(item.substr(0, colon)), std::stod(item.substr(colon + 1)));
        }
    }

    SamplerConfig base = cfg.sampler;
    if (steps > 0) base.steps = steps;
    ModelPredictor pred(model);
    auto eval = [&](const Tensor& images) {
        return std::map<std::string, double>{{"toy_fid", toy_fid(images, ds, n_samples, cfg.model.channels)}};
    };
    auto rows = cfg_sweep(pred, base, scales, intervals,
                          round_robin_classes(n_samples, ds.num_classes), cfg.model.image_size,
                          cfg.model.channels, eval, (fs::path(out) / "sweep.csv").string());
    std::cout << "swept " << rows.size() << " cells; table in " << out << "/sweep.csv\n";
    return 0;
}

// ---------------------------------------------------------------------------
// inspect-ckpt
// ---------------------------------------------------------------------------

int cmd_inspect(const std::string& ckpt_path) {
    Checkpoint ck = load_checkpoint(ckpt_path);
    std::cout << "step: " << ck.step << "\n";
    std::cout << "config echo:\n" << ck.config_echo;

    std::int64_t params = 0, tensors = 0;
    for (const auto& [name, t] : ck.tensors) {
        if (name.rfind("param/", 0) == 0) {
            params += t.numel();
            ++tensors;
        }
    }
    std::cout << "trainable tensors: " << tensors << "\n";
    std::cout << "parameter count: " << params << "\n";

    ModelConfig mc = decode_model_config(ck.config_echo);
    Model probe(mc, 0);
    std::cout << "model parameter count (architecture): " << probe.param_count() << "\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{
        "FrequencyBooster pixel-space diffusion: training, sampling and evaluation.\n"
        "CSV headers: metrics.csv(step,fm,irepa,perceptual,total,lr,wall_time) "
        "fid.csv(metric,value) spectra_*.csv(f_bin,energy) "
        "sweep.csv(cfg_scale,t_lo,t_hi,toy_fid)"};
    app.require_subcommand(1);

    std::string config_path, out_dir, ckpt, resume, class_list, tap = "all";
    std::string scales_arg, intervals_arg;
    std::int64_t seed = -1;
    double cfg_scale = -1.0, t_probe = 0.5;
    int steps = -1, n_samples = 16;
    bool live_weights = false, plot = false;

    auto* train = app.add_subcommand("train", "Train; writes checkpoints and metrics.csv");
    train->add_option("--config", config_path, "experiment config file")->required();
    train->add_option("--out", out_dir, "output directory (overrides config/output_dir)");
    train->add_option("--resume", resume, "checkpoint to resume from");

    auto* smp = app.add_subcommand("sample", "Generate PNGs plus manifest.json");
    smp->add_option("--config", config_path)->required();
    smp->add_option("--ckpt", ckpt)->required();
    smp->add_option("--out", out_dir);
    smp->add_option("--seed", seed, "sampler seed override");
    smp->add_option("--cfg-scale", cfg_scale, "guidance scale override");
    smp->add_option("--steps", steps, "ODE steps override");
    smp->add_option("--n-samples", n_samples, "number of images");
    smp->add_option("--class", class_list, "comma-separated class ids");
    smp->add_flag("--live-weights", live_weights, "use live weights instead of EMA");

    auto* fid = app.add_subcommand("eval-fid", "Toy-FID/IS of generated vs dataset; writes fid.csv");
    fid->add_option("--config", config_path)->required();
    fid->add_option("--ckpt", ckpt)->required();
    fid->add_option("--out", out_dir);
    fid->add_option("--n-samples", n_samples);
    fid->add_option("--seed", seed);
    fid->add_option("--cfg-scale", cfg_scale);
    fid->add_option("--steps", steps);

    auto* spec = app.add_subcommand("eval-spectra",
                                    "Radial spectral profiles of feature maps; writes spectra_*.csv");
    spec->add_option("--config", config_path)->required();
    spec->add_option("--ckpt", ckpt)->required();
    spec->add_option("--out", out_dir);
    spec->add_option("--tap", tap, "c_s | decoder_output | tapped | all");
    spec->add_option("--t", t_probe, "diffusion time of the probe");
    spec->add_option("--n-samples", n_samples);
    spec->add_flag("--plot", plot, "also render spectra.png");

    auto* sweep = app.add_subcommand("sweep-cfg", "CFG scale/interval sweep; writes sweep.csv");
    sweep->add_option("--config", config_path)->required();
    sweep->add_option("--ckpt", ckpt)->required();
    sweep->add_option("--out", out_dir);
    sweep->add_option("--scales", scales_arg, "comma-separated scales (default 1.0..4.0)");
    sweep->add_option("--intervals", intervals_arg, "lo:hi pairs, comma-separated");
    sweep->add_option("--n-samples", n_samples);
    sweep->add_option("--steps", steps);

    auto* inspect = app.add_subcommand("inspect-ckpt", "Print config echo and parameter counts");
    inspect->add_option("--ckpt", ckpt)->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (train->parsed()) return cmd_train(config_path, out_dir, resume);
        if (smp->parsed())
            return cmd_sample(config_path, ckpt, out_dir, seed, cfg_scale, steps, n_samples,
                              class_list, live_weights);
        if (fid->parsed())
            return cmd_eval_fid(config_path, ckpt, out_dir, n_samples, seed, cfg_scale, steps);
        if (spec->parsed())
            return cmd_eval_spectra(config_path, ckpt, out_dir, tap, t_probe, n_samples, plot);
        if (sweep->parsed())
            return cmd_sweep(config_path, ckpt, out_dir, scales_arg, intervals_arg, n_samples, steps);
        if (inspect->parsed()) return cmd_inspect(ckpt);
    } catch (const ConfigError& e) {
        std::cerr << "freqbooster: " << e.what() << "\n";
        return 2;
    } catch (const CheckpointError& e) {
        std::cerr << "freqbooster: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "freqbooster: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
