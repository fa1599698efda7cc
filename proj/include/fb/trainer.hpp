#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fb/checkpoint.hpp"
#include "fb/diffusion.hpp"
#include "fb/losses.hpp"
#include "fb/model.hpp"
#include "fb/rng.hpp"

namespace fb {

struct TrainConfig {
    int batch_size = 16;
    double lr = 2e-4;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.95;
    double adam_eps = 1e-8;
    double weight_decay = 0.0;  // decoupled; inert at 0
    double ema_decay = 0.9999;  // paper sweeps {0.9996, 0.9998, 0.9999}
    double class_drop_prob = 0.1;
    long max_steps = 2000;
    long log_every = 50;
    long ckpt_every = 500;
    std::uint64_t seed = 0;
    int irepa_dim = 16;  // reference-encoder / projector width
    TimeSamplerConfig time_sampler;
    VelocityClipConfig clip;

    void validate() const;
    bool operator==(const TrainConfig&) const = default;
};

// ema' = decay * ema + (1 - decay) * params
void ema_update(Tensor& ema, const Tensor& params, double decay);

// Bias-corrected Adam with decoupled weight decay; next_step counts from 1.
void adam_update(Tensor& value, const Tensor& grad, Tensor& m, Tensor& v, long next_step,
                 double lr, double beta1, double beta2, double eps, double weight_decay);

// Owns the model, the trainable iREPA projector, frozen feature plugs, Adam
// moments, the EMA shadow, and the training random stream. Single-writer.
class Trainer {
  public:
    Trainer(const ModelConfig& mc, const TrainConfig& tc, const LossWeights& lw,
            std::uint64_t init_seed);

    // swap the desk-scale defaults for other deterministic plugs
    void set_perceptual(std::shared_ptr<PerceptualExtractor> p) { perceptual_ = std::move(p); }
    void set_encoder(std::shared_ptr<RepresentationEncoder> e) { encoder_ = std::move(e); }

    // One optimization step on (images in [-1,1], labels). Deterministic
    // given seed and state. A non-finite loss throws before any mutation.
    LossReport train_step(const Tensor& images, const std::vector<int>& labels);

    // Deterministic with-replacement batch draw from [0, dataset_size).
    std::vector<int> next_batch_indices(int dataset_size);

    Model& model() { return model_; }
    const Model& model() const { return model_; }
    IrepaProjector& projector() { return projector_; }
    long step() const { return step_; }
    Rng& rng() { return rng_; }
    const TrainConfig& train_config() const { return tc_; }
    const LossWeights& loss_weights() const { return lw_; }

    // All trainable tensors (model parameters + projector), stable order.
    std::vector<ParamView> trainable();

    // EMA shadow aligned with trainable() order.
    const std::vector<Tensor>& ema() const { return ema_; }

    // Model carrying the EMA weights (for sampling / evaluation).
    Model ema_model() const;

    void save(const std::string& path) const;
    void load(const std::string& path);  // throws CheckpointConfigError on echo mismatch

  private:
    ModelConfig mc_;
    TrainConfig tc_;
    LossWeights lw_;
    Model model_;
    IrepaProjector projector_;
    std::shared_ptr<PerceptualExtractor> perceptual_;
    std::shared_ptr<RepresentationEncoder> encoder_;
    std::vector<Tensor> ema_, adam_m_, adam_v_;
    long step_ = 0;
    Rng rng_;

    void adam_step();
};

// Rebuild a model from a checkpoint (EMA weights by default).
Model model_from_checkpoint(const Checkpoint& ckpt, bool use_ema = true);

}  // namespace fb
