#pragma once

#include <string>

#include "fb/dataset.hpp"
#include "fb/losses.hpp"
#include "fb/model.hpp"
#include "fb/sampler.hpp"
#include "fb/trainer.hpp"

namespace fb {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Everything a command needs, parsed from a flat dotted-key text file
// (`key: value` lines, '#' comments). Unknown keys are rejected, except the
// accepted-but-unused "model.bottleneck" (kept verbatim) and the reserved
// "model.irepa_decoder_tap" flag, which carries no semantics yet.
struct ExperimentConfig {
    ModelConfig model;      // defaults to the size-B preset at 256
    TrainConfig train;
    SamplerConfig sampler;
    LossWeights loss_weights;
    DatasetSpec dataset;
    std::string output_dir = "out";
    int bottleneck = 256;            // accepted but unused
    bool irepa_decoder_tap = false;  // reserved; no semantics

    bool operator==(const ExperimentConfig&) const = default;
};

// Architecture presets mirroring the published B / L / H columns.
// patch_size = image_size / 16.
ModelConfig preset_model(const std::string& name, int image_size);

ExperimentConfig parse_config(const std::string& path);
ExperimentConfig parse_config_text(const std::string& text);
std::string emit_config(const ExperimentConfig& cfg);

}  // namespace fb
