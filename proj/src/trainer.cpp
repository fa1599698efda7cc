#include "fb/trainer.hpp"

#include <cmath>

namespace fb {

void TrainConfig::validate() const {
    if (batch_size < 1) throw std::invalid_argument("train: batch_size must be >= 1");
    if (lr <= 0.0) throw std::invalid_argument("train: lr must be positive");
    if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0 && adam_beta2 >= 0.0 && adam_beta2 < 1.0))
        throw std::invalid_argument("train: adam betas must lie in [0, 1)");
    if (!(ema_decay > 0.0 && ema_decay < 1.0))
        throw std::invalid_argument("train: ema_decay must lie in (0, 1)");
    if (class_drop_prob < 0.0 || class_drop_prob > 1.0)
        throw std::invalid_argument("train: class_drop_prob must lie in [0, 1]");
    if (weight_decay < 0.0) throw std::invalid_argument("train: weight_decay must be >= 0");
    if (max_steps < 0) throw std::invalid_argument("train: max_steps must be >= 0");
    if (irepa_dim < 1) throw std::invalid_argument("train: irepa_dim must be >= 1");
}

void ema_update(Tensor& ema, const Tensor& params, double decay) {
    require_same_shape(ema, params, "ema_update");
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < ema.numel(); ++i)
        ema[i] = decay * ema[i] + (1.0 - decay) * params[i];
}

Trainer::Trainer(const ModelConfig& mc, const TrainConfig& tc, const LossWeights& lw,
                 std::uint64_t init_seed)
    : mc_(mc),
      tc_(tc),
      lw_(lw),
      model_(mc, init_seed),
      projector_(mc.dit_dim, tc.irepa_dim, init_seed ^ 0x9e3779b97f4a7c15ull),
      rng_(tc.seed) {
    tc_.validate();
    perceptual_ = std::make_shared<RandomConvExtractor>(init_seed ^ 0xd1b54a32d192ed03ull,
                                                        mc.channels);
    encoder_ = std::make_shared<PatchAverageEncoder>(init_seed ^ 0x94d049bb133111ebull,
                                                     mc.patch_size, mc.channels, tc.irepa_dim);
    for (auto& p : trainable()) {
        ema_.push_back(*p.value);  // EMA starts as a copy of the init
        adam_m_.emplace_back(p.value->shape);
        adam_v_.emplace_back(p.value->shape);
    }
}

std::vector<ParamView> Trainer::trainable() {
    std::vector<ParamView> views = model_.params();
    views.push_back({"irepa_proj.weight", &projector_.w, &projector_.gw});
    views.push_back({"irepa_proj.bias", &projector_.b, &projector_.gb});
    return views;
}

std::vector<int> Trainer::next_batch_indices(int dataset_size) {
    if (dataset_size < 1) throw std::invalid_argument("trainer: empty dataset");
    std::vector<int> idx(tc_.batch_size);
    for (auto& i : idx) i = static_cast<int>(rng_.below(static_cast<std::uint64_t>(dataset_size)));
    return idx;
}

LossReport Trainer::train_step(const Tensor& images, const std::vector<int>& labels) {
    const int batch = static_cast<int>(images.dim(0));
    if (static_cast<int>(labels.size()) != batch)
        throw std::invalid_argument("train_step: labels size mismatch");
    for (int id : labels)
        if (id < 0 || id >= mc_.num_classes)
            throw std::invalid_argument("train_step: label out of range");

    const double s = noise_scale_for(mc_.image_size);
    const std::int64_t per = images.numel() / batch;

    // per-example draw order: time, noise, class-drop coin
    std::vector<double> ts(batch);
    std::vector<int> cls(batch);
    Tensor z(images.shape);
    for (int b = 0; b < batch; ++b) {
        ts[b] = sample_time(rng_, tc_.time_sampler);
        const double* x = images.ptr() + static_cast<std::int64_t>(b) * per;
        double* zb = z.ptr() + static_cast<std::int64_t>(b) * per;
        for (std::int64_t i = 0; i < per; ++i)
            zb[i] = ts[b] * x[i] + (1.0 - ts[b]) * s * rng_.normal();
        cls[b] = (rng_.uniform() < tc_.class_drop_prob) ? model_.null_class() : labels[b];
    }

    ForwardCache cache;
    auto result = model_.forward(z, ts, cls, true, &rng_, &cache);

    // reference tokens from the frozen encoder on the clean images
    Tensor reference({batch, mc_.seq_len(), tc_.irepa_dim});
    for (int b = 0; b < batch; ++b) {
        Tensor img({mc_.image_size, mc_.image_size, mc_.channels});
        std::copy(images.ptr() + static_cast<std::int64_t>(b) * per,
                  images.ptr() + static_cast<std::int64_t>(b + 1) * per, img.ptr());
        TokenSequence enc = encoder_->encode(img);
        std::copy(enc.data.ptr(), enc.data.ptr() + enc.data.numel(),
                  reference.ptr() + static_cast<std::int64_t>(b) * enc.data.numel());
    }

    model_.zero_grads();
    projector_.zero_grads();
    Tensor d_x_pred(images.shape);
    Tensor d_tapped(result.tapped.shape);

    const double fm = fm_loss_batch(result.x_pred, images, ts, tc_.clip, &d_x_pred);
    const double perc =
        perceptual_loss_batch(result.x_pred, images, *perceptual_, lw_.beta_lpips, &d_x_pred);
    const double irepa =
        irepa_loss_batch(result.tapped, reference, projector_, lw_.lambda_irepa, &d_tapped);

    // throws on NaN/Inf before any parameter is touched
    LossReport report = total_loss(fm, irepa, perc, lw_);

    model_.backward(cache, d_x_pred, d_tapped);
    adam_step();

    auto views = trainable();
    for (std::size_t i = 0; i < views.size(); ++i)
        ema_update(ema_[i], *views[i].value, tc_.ema_decay);
    ++step_;
    return report;
}

void adam_update(Tensor& value, const Tensor& grad, Tensor& m, Tensor& v, long next_step,
                 double lr, double beta1, double beta2, double eps, double weight_decay) {
    require_same_shape(value, grad, "adam_update");
    const double t = static_cast<double>(next_step);
    const double bc1 = 1.0 - std::pow(beta1, t);
    const double bc2 = 1.0 - std::pow(beta2, t);
#pragma omp parallel for schedule(static)
    for (std::int64_t j = 0; j < value.numel(); ++j) {
        m[j] = beta1 * m[j] + (1.0 - beta1) * grad[j];
        v[j] = beta2 * v[j] + (1.0 - beta2) * grad[j] * grad[j];
        const double mhat = m[j] / bc1;
        const double vhat = v[j] / bc2;
        value[j] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * value[j]);
    }
}

void Trainer::adam_step() {
    auto views = trainable();
    for (std::size_t i = 0; i < views.size(); ++i)
        adam_update(*views[i].value, *views[i].grad, adam_m_[i], adam_v_[i], step_ + 1, tc_.lr,
                    tc_.adam_beta1, tc_.adam_beta2, tc_.adam_eps, tc_.weight_decay);
}

Model Trainer::ema_model() const {
    Model m(mc_, 0);
    auto views = m.params();
    for (std::size_t i = 0; i < views.size(); ++i) *views[i].value = ema_[i];
    return m;
}

void Trainer::save(const std::string& path) const {
    Checkpoint ckpt;
    ckpt.step = static_cast<std::uint64_t>(step_);
    ckpt.config_echo = encode_model_config(mc_);
    ckpt.rng_state = rng_.serialize();
    auto views = const_cast<Trainer*>(this)->trainable();
    for (std::size_t i = 0; i < views.size(); ++i)
        ckpt.tensors.emplace_back("param/" + views[i].name, *views[i].value);
    for (std::size_t i = 0; i < views.size(); ++i)
        ckpt.tensors.emplace_back("ema/" + views[i].name, ema_[i]);
    for (std::size_t i = 0; i < views.size(); ++i)
        ckpt.tensors.emplace_back("adam_m/" + views[i].name, adam_m_[i]);
    for (std::size_t i = 0; i < views.size(); ++i)
        ckpt.tensors.emplace_back("adam_v/" + views[i].name, adam_v_[i]);
    save_checkpoint(ckpt, path);
}

void Trainer::load(const std::string& path) {
    Checkpoint ckpt = load_checkpoint(path);
    if (ckpt.config_echo != encode_model_config(mc_))
        throw CheckpointConfigError("checkpoint: ModelConfig echo mismatch for " + path);
    auto views = trainable();
    auto fetch = [&ckpt](const std::string& name) -> const Tensor& {
        const Tensor* t = ckpt.find(name);
        if (!t) throw CheckpointCorruptError("checkpoint: missing tensor " + name);
        return *t;
    };
    for (std::size_t i = 0; i < views.size(); ++i) {
        const Tensor& src = fetch("param/" + views[i].name);
        require_same_shape(src, *views[i].value, "checkpoint param");
        *views[i].value = src;
        ema_[i] = fetch("ema/" + views[i].name);
        adam_m_[i] = fetch("adam_m/" + views[i].name);
        adam_v_[i] = fetch("adam_v/" + views[i].name);
    }
    step_ = static_cast<long>(ckpt.step);
    rng_.deserialize(ckpt.rng_state);
}

Model model_from_checkpoint(const Checkpoint& ckpt, bool use_ema) {
    ModelConfig cfg = decode_model_config(ckpt.config_echo);
    Model m(cfg, 0);
    const std::string prefix = use_ema ? "ema/" : "param/";
    for (auto& p : m.params()) {
        const Tensor* t = ckpt.find(prefix + p.name);
        if (!t) throw CheckpointCorruptError("checkpoint: missing tensor " + prefix + p.name);
        require_same_shape(*t, *p.value, "checkpoint tensor");
        *p.value = *t;
    }
    return m;
}

}  // namespace fb
