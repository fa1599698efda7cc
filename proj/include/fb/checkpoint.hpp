#pragma once

#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "fb/model.hpp"
#include "fb/tensor.hpp"

namespace fb {

struct CheckpointError : std::runtime_error {
    using std::runtime_error::runtime_error;
};
// wrong container version
struct CheckpointVersionError : CheckpointError {
    using CheckpointError::CheckpointError;
};
// truncated or malformed archive
struct CheckpointCorruptError : CheckpointError {
    using CheckpointError::CheckpointError;
};
// echoed ModelConfig does not match the expected one
struct CheckpointConfigError : CheckpointError {
    using CheckpointError::CheckpointError;
};

// Versioned named-tensor archive. Save is atomic (write temp, rename);
// save -> load -> save round-trips byte-identically.
struct Checkpoint {
    std::uint64_t step = 0;
    std::string config_echo;  // serialized ModelConfig
    std::string rng_state;
    std::vector<std::pair<std::string, Tensor>> tensors;  // insertion-ordered

    const Tensor* find(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

// Flat text encoding of the architecture config, embedded in checkpoints.
std::string encode_model_config(const ModelConfig& cfg);
ModelConfig decode_model_config(const std::string& text);

}  // namespace fb
