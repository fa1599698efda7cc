#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fb/rng.hpp"
#include "fb/tensor.hpp"

namespace fb {

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

struct ModelConfig {
    int image_size = 256;
    int patch_size = 16;
    int channels = 3;
    int dit_depth = 10;
    int dec_depth = 2;
    int dit_dim = 768;   // D
    int dec_dim = 1536;  // n * D, n >= 1
    int heads = 12;
    int n_class_tokens = 32;
    int in_context_start_block = 4;
    int irepa_tap_block = 4;
    int num_classes = 1000;
    double dropout = 0.2;

    int grid() const { return image_size / patch_size; }
    int seq_len() const { return grid() * grid(); }
    int token_width() const { return patch_size * patch_size * channels; }
    int null_class() const { return num_classes; }

    void validate() const;  // throws std::invalid_argument on violation
    bool operator==(const ModelConfig&) const = default;
};

// ---------------------------------------------------------------------------
// Token sequences
// ---------------------------------------------------------------------------

// A length-L sequence of feature vectors with its spatial grid shape.
struct TokenSequence {
    Tensor data;  // [L, width]
    int rows = 0;
    int cols = 0;

    int length() const { return static_cast<int>(data.dim(0)); }
    int width() const { return static_cast<int>(data.dim(1)); }
    void check() const;  // L == rows * cols
};

struct ConditioningContext {
    double t = 0.0;
    int class_id = 0;                    // label index, or null_class() sentinel
    const TokenSequence* c_s = nullptr;  // optional semantic condition
};

// Splits an H x W x C image into non-overlapping p x p patches, row-major,
// top-left origin; each token is the flattened patch (y, x, c order).
TokenSequence patchify(const Tensor& image, int p);
// Exact inverse of patchify.
Tensor unpatchify(const TokenSequence& tokens, int p);

// ---------------------------------------------------------------------------
// Activation record for backward()
// ---------------------------------------------------------------------------

struct BlockCache {
    int t = 0;          // sequence length seen by this block
    Tensor x_in;        // [B*T, dim]
    Tensor mod;         // [B, 6*dim] adaLN output
    Tensor ln1_out, ln1_mean, ln1_rstd;
    Tensor mod1;        // attention input
    Tensor qkv;         // [B*T, 3*dim]
    Tensor probs;       // [B, H, T, T]
    Tensor attn_merged; // heads merged, before out projection
    Tensor drop1_mask;  // empty when dropout inactive
    Tensor attn_branch; // after dropout, before gate
    Tensor x_mid;
    Tensor ln2_out, ln2_mean, ln2_rstd;
    Tensor mod2;
    Tensor fc1_out;     // pre-gelu
    Tensor gelu_out;
    Tensor drop2_mask;
    Tensor mlp_hidden;  // fc2 input
    Tensor mlp_out;     // before gate
};

struct CondCache {
    Tensor sin;     // [B, dim] sinusoidal time embedding
    Tensor h1;      // fc1 output, pre-silu
    Tensor a1;      // silu(h1)
    Tensor c;       // conditioning vector (dit: + class embedding)
    Tensor silu_c;  // adaLN input, shared by all blocks of the side
};

struct ForwardCache {
    int batch = 0;
    bool training = false;
    std::vector<double> ts;
    std::vector<int> cls;
    Tensor patches;    // [B*L, p*p*C]
    CondCache dit_cond;
    std::vector<BlockCache> dit_blocks;
    Tensor c_s;        // [B*L, D] stripped
    Tensor c_s_up;     // [B*L, dec_dim]
    Tensor reproj_out; // [B*L, dec_dim]
    CondCache dec_cond;
    std::vector<BlockCache> dec_blocks;
    Tensor x_r;        // [B*L, dec_dim]
    Tensor fused;      // [B*L, dec_dim]
};

// ---------------------------------------------------------------------------
// Network
// ---------------------------------------------------------------------------

struct Param {
    std::string name;
    Tensor value;
    Tensor grad;
};

struct ParamView {
    std::string name;
    Tensor* value;
    Tensor* grad;
};

struct DitOutput {
    TokenSequence c_s;     // [L, D]
    TokenSequence tapped;  // [L, D], captured after irepa_tap_block
};

struct ForwardResult {
    Tensor x_pred;  // [B, H, W, C]
    Tensor tapped;  // [B, L, D]
    Tensor c_s;     // [B, L, D]
};

class Model {
  public:
    Model(const ModelConfig& cfg, std::uint64_t init_seed);

    const ModelConfig& config() const { return cfg_; }
    int null_class() const { return cfg_.null_class(); }

    std::vector<ParamView> params();
    std::vector<std::pair<std::string, const Tensor*>> named_values() const;
    std::int64_t param_count() const;
    void zero_grads();

    // Batched end-to-end pass: patchify -> DiT -> bridge -> FB-Decoder ->
    // fuse -> re-project. z: [B, H, W, C]; ts/cls carry one entry per image.
    // training=true applies dropout driven by rng; cache (if given) records
    // activations for backward().
    ForwardResult forward(const Tensor& z, const std::vector<double>& ts,
                          const std::vector<int>& cls, bool training = false,
                          Rng* rng = nullptr, ForwardCache* cache = nullptr) const;

    // Accumulates parameter gradients given upstream gradients of x_pred and
    // the tapped features ([B, L, D]; pass an empty tensor for no tap grad).
    void backward(const ForwardCache& cache, const Tensor& d_x_pred,
                  const Tensor& d_tapped);

    // Single-sequence stages (inference mode, no dropout).
    DitOutput dit_forward(const TokenSequence& z_tokens, const ConditioningContext& ctx) const;
    TokenSequence bridge_up(const TokenSequence& c_s) const;
    TokenSequence decoder_forward(const TokenSequence& z_tokens, const TokenSequence& c_s_up,
                                  const ConditioningContext& ctx) const;
    Tensor fuse_and_project(const TokenSequence& x_r, const TokenSequence& c_s_up) const;

  private:
    struct BlockParams {
        Param adaln_w, adaln_b;
        Param qkv_w, qkv_b;
        Param proj_w, proj_b;
        Param fc1_w, fc1_b;
        Param fc2_w, fc2_b;
    };

    ModelConfig cfg_;
    Param patch_embed_w_, patch_embed_b_;
    Param pos_embed_;        // [L, D]
    Param class_embed_;      // [num_classes + 1, D], last row = null class
    Param class_pos_embed_;  // [n_class_tokens, D]
    Param dit_t_fc1_w_, dit_t_fc1_b_, dit_t_fc2_w_, dit_t_fc2_b_;
    std::vector<BlockParams> dit_;
    Param bridge_w_, bridge_b_;
    Param reproj_w_, reproj_b_;
    Param dec_t_fc1_w_, dec_t_fc1_b_, dec_t_fc2_w_, dec_t_fc2_b_;
    std::vector<BlockParams> dec_;
    Param final_w_, final_b_;

    void collect(std::vector<ParamView>& out) const;

    Tensor run_dit(const Tensor& patch_tokens, const std::vector<double>& ts,
                   const std::vector<int>& cls, bool training, Rng* rng,
                   ForwardCache* cache, Tensor* tapped_out) const;
    Tensor run_decoder(const Tensor& patch_tokens, const Tensor& c_s_up,
                       const std::vector<double>& ts, bool training, Rng* rng,
                       ForwardCache* cache) const;
    Tensor apply_bridge(const Tensor& c_s) const;
    Tensor apply_fusion(const Tensor& x_r, const Tensor& c_s_up, Tensor* fused_out) const;
};

}  // namespace fb
