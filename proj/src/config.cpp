#include "fb/config.hpp"

#include <fstream>
#include <map>
#include <sstream>

namespace fb {

ModelConfig preset_model(const std::string& name, int image_size) {
    ModelConfig m;
    m.image_size = image_size;
    if (image_size % 16 != 0) throw ConfigError("preset: image_size must be divisible by 16");
    m.patch_size = image_size / 16;
    m.n_class_tokens = 32;
    m.dropout = 0.2;
    if (name == "B") {
        m.dit_depth = 10;
        m.dec_depth = 2;
        m.dit_dim = 768;
        m.dec_dim = 1536;
        m.heads = 12;
        m.in_context_start_block = 4;
        m.irepa_tap_block = 4;
    } else if (name == "L") {
        m.dit_depth = 20;
        m.dec_depth = 4;
        m.dit_dim = 1024;
        m.dec_dim = 2048;
        m.heads = 16;
        m.in_context_start_block = 8;
        m.irepa_tap_block = 10;
    } else if (name == "H") {
        m.dit_depth = 28;
        m.dec_depth = 4;
        m.dit_dim = 1280;
        m.dec_dim = 2048;
        m.heads = 16;
        m.in_context_start_block = 10;
        m.irepa_tap_block = 10;
    } else {
        throw ConfigError("preset: unknown model size '" + name + "' (expected B, L or H)");
    }
    return m;
}

namespace {

std::map<std::string, std::string> read_kv(const std::string& text) {
    std::map<std::string, std::string> kv;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto first = line.find_first_not_of(" \t\r");
        if (first == std::string::npos) continue;
        auto last = line.find_last_not_of(" \t\r");
        line = line.substr(first, last - first + 1);
        auto colon = line.find(':');
        if (colon == std::string::npos)
            throw ConfigError("config line " + std::to_string(lineno) + ": expected 'key: value'");
        std::string key = line.substr(0, colon);
        std::string val = line.substr(colon + 1);
        auto kl = key.find_last_not_of(" \t");
        key = key.substr(0, kl + 1);
        auto vf = val.find_first_not_of(" \t");
        val = (vf == std::string::npos) ? "" : val.substr(vf);
        if (kv.count(key)) throw ConfigError("config: duplicate key '" + key + "'");
        kv[key] = val;
    }
    return kv;
}

struct KvReader {
    std::map<std::string, std::string> kv;
    std::map<std::string, bool> seen;

    bool has(const std::string& k) {
        auto it = kv.find(k);
        if (it == kv.end()) return false;
        seen[k] = true;
        return true;
    }
    std::string str(const std::string& k) {
        seen[k] = true;
        return kv.at(k);
    }
    int geti(const std::string& k, int dflt) {
        if (!has(k)) return dflt;
        try {
            std::size_t pos = 0;
            int v = std::stoi(kv.at(k), &pos);
            if (pos != kv.at(k).size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + k + "': not an integer: '" + kv.at(k) + "'");
        }
    }
    long getl(const std::string& k, long dflt) {
        if (!has(k)) return dflt;
        try {
            return std::stol(kv.at(k));
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + k + "': not an integer: '" + kv.at(k) + "'");
        }
    }
    std::uint64_t getu(const std::string& k, std::uint64_t dflt) {
        if (!has(k)) return dflt;
        try {
            return std::stoull(kv.at(k));
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + k + "': not an unsigned integer: '" + kv.at(k) + "'");
        }
    }
    double getd(const std::string& k, double dflt) {
        if (!has(k)) return dflt;
        try {
            std::size_t pos = 0;
            double v = std::stod(kv.at(k), &pos);
            if (pos != kv.at(k).size()) throw std::invalid_argument("trailing");
            return v;
        } catch (const std::exception&) {
            throw ConfigError("config: key '" + k + "': not a number: '" + kv.at(k) + "'");
        }
    }
    bool getb(const std::string& k, bool dflt) {
        if (!has(k)) return dflt;
        const std::string& v = kv.at(k);
        if (v == "true" || v == "1") return true;
        if (v == "false" || v == "0") return false;
        throw ConfigError("config: key '" + k + "': not a boolean: '" + v + "'");
    }
};

}  // namespace

ExperimentConfig parse_config_text(const std::string& text) {
    KvReader r{read_kv(text), {}};
    ExperimentConfig cfg;

    // architecture: preset first (default B), explicit keys override
    const int image_size = r.geti("model.image_size", 256);
    const std::string preset = r.has("preset") ? r.str("preset") : "B";
    const int patch_override = r.geti("model.patch_size", -1);
    if (patch_override > 0) {
        // the preset's image_size/16 patch rule is moot when patch_size is given
        cfg.model = preset_model(preset, 256);
        cfg.model.image_size = image_size;
        cfg.model.patch_size = patch_override;
    } else {
        cfg.model = preset_model(preset, image_size);
    }
    cfg.model.channels = r.geti("model.channels", cfg.model.channels);
    cfg.model.dit_depth = r.geti("model.dit_depth", cfg.model.dit_depth);
    cfg.model.dec_depth = r.geti("model.dec_depth", cfg.model.dec_depth);
    cfg.model.dit_dim = r.geti("model.dit_dim", cfg.model.dit_dim);
    cfg.model.dec_dim = r.geti("model.dec_dim", cfg.model.dec_dim);
    cfg.model.heads = r.geti("model.heads", cfg.model.heads);
    cfg.model.n_class_tokens = r.geti("model.n_class_tokens", cfg.model.n_class_tokens);
    cfg.model.in_context_start_block =
        r.geti("model.in_context_start_block", cfg.model.in_context_start_block);
    cfg.model.irepa_tap_block = r.geti("model.irepa_tap_block", cfg.model.irepa_tap_block);
    cfg.model.num_classes = r.geti("model.num_classes", cfg.model.num_classes);
    cfg.model.dropout = r.getd("model.dropout", cfg.model.dropout);
    cfg.bottleneck = r.geti("model.bottleneck", cfg.bottleneck);
    cfg.irepa_decoder_tap = r.getb("model.irepa_decoder_tap", cfg.irepa_decoder_tap);

    cfg.train.batch_size = r.geti("train.batch_size", cfg.train.batch_size);
    cfg.train.lr = r.getd("train.lr", cfg.train.lr);
    cfg.train.adam_beta1 = r.getd("train.adam_beta1", cfg.train.adam_beta1);
    cfg.train.adam_beta2 = r.getd("train.adam_beta2", cfg.train.adam_beta2);
    cfg.train.weight_decay = r.getd("train.weight_decay", cfg.train.weight_decay);
    cfg.train.ema_decay = r.getd("train.ema_decay", cfg.train.ema_decay);
    cfg.train.class_drop_prob = r.getd("train.class_drop_prob", cfg.train.class_drop_prob);
    cfg.train.max_steps = r.getl("train.max_steps", cfg.train.max_steps);
    cfg.train.log_every = r.getl("train.log_every", cfg.train.log_every);
    cfg.train.ckpt_every = r.getl("train.ckpt_every", cfg.train.ckpt_every);
    cfg.train.seed = r.getu("train.seed", cfg.train.seed);
    cfg.train.irepa_dim = r.geti("train.irepa_dim", cfg.train.irepa_dim);
    cfg.train.time_sampler.mu = r.getd("train.time_mu", cfg.train.time_sampler.mu);
    cfg.train.time_sampler.sigma = r.getd("train.time_sigma", cfg.train.time_sampler.sigma);

    const double clip = r.getd("clip.min_one_minus_t", 0.05);
    cfg.train.clip.min_one_minus_t = clip;
    cfg.sampler.clip.min_one_minus_t = clip;

    cfg.sampler.steps = r.geti("sampler.steps", cfg.sampler.steps);
    cfg.sampler.cfg_scale = r.getd("sampler.cfg_scale", cfg.sampler.cfg_scale);
    cfg.sampler.t_lo = r.getd("sampler.cfg_t_lo", cfg.sampler.t_lo);
    cfg.sampler.t_hi = r.getd("sampler.cfg_t_hi", cfg.sampler.t_hi);
    cfg.sampler.seed = r.getu("sampler.seed", cfg.sampler.seed);

    cfg.loss_weights.lambda_irepa = r.getd("loss.lambda_irepa", cfg.loss_weights.lambda_irepa);
    cfg.loss_weights.beta_lpips = r.getd("loss.beta_lpips", cfg.loss_weights.beta_lpips);

    if (r.has("dataset.kind")) {
        const std::string kind = r.str("dataset.kind");
        if (kind == "synthetic")
            cfg.dataset.kind = DatasetSpec::Kind::Synthetic;
        else if (kind == "folder")
            cfg.dataset.kind = DatasetSpec::Kind::Folder;
        else
            throw ConfigError("config: dataset.kind must be 'synthetic' or 'folder'");
    }
    cfg.dataset.root = r.has("dataset.path") ? r.str("dataset.path") : cfg.dataset.root;
    cfg.dataset.seed = r.getu("dataset.seed", cfg.dataset.seed);
    cfg.dataset.size = r.geti("dataset.size", cfg.dataset.size);
    cfg.dataset.image_size = cfg.model.image_size;
    cfg.dataset.num_classes = cfg.model.num_classes;

    cfg.output_dir = r.has("output_dir") ? r.str("output_dir") : cfg.output_dir;

    for (const auto& [k, v] : r.kv)
        if (!r.seen.count(k)) throw ConfigError("config: unknown key '" + k + "'");

    try {
        cfg.model.validate();
        cfg.train.validate();
        cfg.sampler.validate();
        cfg.dataset.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("config: ") + e.what());
    }
    return cfg;
}

ExperimentConfig parse_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config: cannot open " + path);
    std::stringstream ss;
    ss << is.rdbuf();
    return parse_config_text(ss.str());
}

std::string emit_config(const ExperimentConfig& c) {
    std::ostringstream os;
    os.precision(17);
    os << "model.image_size: " << c.model.image_size << "\n"
       << "model.patch_size: " << c.model.patch_size << "\n"
       << "model.channels: " << c.model.channels << "\n"
       << "model.dit_depth: " << c.model.dit_depth << "\n"
       << "model.dec_depth: " << c.model.dec_depth << "\n"
       << "model.dit_dim: " << c.model.dit_dim << "\n"
       << "model.dec_dim: " << c.model.dec_dim << "\n"
       << "model.heads: " << c.model.heads << "\n"
       << "model.n_class_tokens: " << c.model.n_class_tokens << "\n"
       << "model.in_context_start_block: " << c.model.in_context_start_block << "\n"
       << "model.irepa_tap_block: " << c.model.irepa_tap_block << "\n"
       << "model.num_classes: " << c.model.num_classes << "\n"
       << "model.dropout: " << c.model.dropout << "\n"
       << "model.bottleneck: " << c.bottleneck << "\n"
       << "model.irepa_decoder_tap: " << (c.irepa_decoder_tap ? "true" : "false") << "\n"
       << "train.batch_size: " << c.train.batch_size << "\n"
       << "train.lr: " << c.train.lr << "\n"
       << "train.adam_beta1: " << c.train.adam_beta1 << "\n"
       << "train.adam_beta2: " << c.train.adam_beta2 << "\n"
       << "train.weight_decay: " << c.train.weight_decay << "\n"
       << "train.ema_decay: " << c.train.ema_decay << "\n"
       << "train.class_drop_prob: " << c.train.class_drop_prob << "\n"
       << "train.max_steps: " << c.train.max_steps << "\n"
       << "train.log_every: " << c.train.log_every << "\n"
       << "train.ckpt_every: " << c.train.ckpt_every << "\n"
       << "train.seed: " << c.train.seed << "\n"
       << "train.irepa_dim: " << c.train.irepa_dim << "\n"
       << "train.time_mu: " << c.train.time_sampler.mu << "\n"
       << "train.time_sigma: " << c.train.time_sampler.sigma << "\n"
       << "clip.min_one_minus_t: " << c.train.clip.min_one_minus_t << "\n"
       << "sampler.steps: " << c.sampler.steps << "\n"
       << "sampler.cfg_scale: " << c.sampler.cfg_scale << "\n"
       << "sampler.cfg_t_lo: " << c.sampler.t_lo << "\n"
       << "sampler.cfg_t_hi: " << c.sampler.t_hi << "\n"
       << "sampler.seed: " << c.sampler.seed << "\n"
       << "loss.lambda_irepa: " << c.loss_weights.lambda_irepa << "\n"
       << "loss.beta_lpips: " << c.loss_weights.beta_lpips << "\n"
       << "dataset.kind: "
       << (c.dataset.kind == DatasetSpec::Kind::Synthetic ? "synthetic" : "folder") << "\n";
    if (!c.dataset.root.empty()) os << "dataset.path: " << c.dataset.root << "\n";
    os << "dataset.seed: " << c.dataset.seed << "\n"
       << "dataset.size: " << c.dataset.size << "\n"
       << "output_dir: " << c.output_dir << "\n";
    return os.str();
}

}  // namespace fb
