#include "fb/model.hpp"

#include <cmath>
#include <stdexcept>

#include "fb/kernels.hpp"

namespace fb {

namespace {

// mod row layout: [shift_attn | scale_attn | gate_attn | shift_mlp | scale_mlp | gate_mlp]
enum ModOffset { kShiftA = 0, kScaleA = 1, kGateA = 2, kShiftM = 3, kScaleM = 4, kGateM = 5 };

// y = x * W^T + b, x: [rows, in], W: [out, in]
void linear_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y,
                    int rows, int in, int out) {
    kernels::matmul_nt(x.ptr(), w.ptr(), y.ptr(), rows, in, out);
    kernels::add_bias(y.ptr(), b.ptr(), rows, out);
}

// Accumulates dW, db; writes dx when non-null.
void linear_backward(const Tensor& x, const Tensor& w, const Tensor& dy, Tensor* dx,
                     Tensor& dw, Tensor& db, int rows, int in, int out) {
    if (dx) kernels::matmul(dy.ptr(), w.ptr(), dx->ptr(), rows, out, in);
    kernels::matmul_tn(dy.ptr(), x.ptr(), dw.ptr(), out, rows, in);
    kernels::bias_grad(dy.ptr(), db.ptr(), rows, out);
}

// Sinusoidal embedding of continuous time; t is spread by 1000 so the
// frequency ladder covers (0,1) usefully.
void sincos_time_embed(double t, double* out, int dim) {
    const int half = dim / 2;
    const double tt = t * 1000.0;
    for (int i = 0; i < half; ++i) {
        double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) / half);
        out[i] = std::cos(tt * freq);
        out[half + i] = std::sin(tt * freq);
    }
}

// y[b*t + i, d] = x[b*t + i, d] * (1 + mod[b, scale]) + mod[b, shift]
void modulate_forward(const Tensor& x, const Tensor& mod, Tensor& y, int batch, int t, int dim,
                      int shift_slot, int scale_slot) {
    const std::int64_t rows = static_cast<std::int64_t>(batch) * t;
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < rows; ++r) {
        int b = static_cast<int>(r / t);
        const double* sh = mod.ptr() + (static_cast<std::int64_t>(b) * 6 + shift_slot) * dim;
        const double* sc = mod.ptr() + (static_cast<std::int64_t>(b) * 6 + scale_slot) * dim;
        const double* xr = x.ptr() + r * dim;
        double* yr = y.ptr() + r * dim;
        for (int d = 0; d < dim; ++d) yr[d] = xr[d] * (1.0 + sc[d]) + sh[d];
    }
}

// dx = dy * (1 + scale); dmod[shift] += sum_t dy; dmod[scale] += sum_t dy * x
void modulate_backward(const Tensor& dy, const Tensor& x, const Tensor& mod, Tensor& dx,
                       Tensor& dmod, int batch, int t, int dim, int shift_slot, int scale_slot) {
    const std::int64_t rows = static_cast<std::int64_t>(batch) * t;
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < rows; ++r) {
        int b = static_cast<int>(r / t);
        const double* sc = mod.ptr() + (static_cast<std::int64_t>(b) * 6 + scale_slot) * dim;
        const double* dyr = dy.ptr() + r * dim;
        double* dxr = dx.ptr() + r * dim;
        for (int d = 0; d < dim; ++d) dxr[d] = dyr[d] * (1.0 + sc[d]);
    }
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < batch; ++b) {
        for (int d = 0; d < dim; ++d) {
            double acc_sh = 0.0, acc_sc = 0.0;
            for (int i = 0; i < t; ++i) {
                std::int64_t r = static_cast<std::int64_t>(b) * t + i;
                acc_sh += dy[r * dim + d];
                acc_sc += dy[r * dim + d] * x[r * dim + d];
            }
            dmod[(static_cast<std::int64_t>(b) * 6 + shift_slot) * dim + d] += acc_sh;
            dmod[(static_cast<std::int64_t>(b) * 6 + scale_slot) * dim + d] += acc_sc;
        }
    }
}

// x += gate * branch
void gated_add(Tensor& x, const Tensor& branch, const Tensor& mod, int gate_slot,
               int batch, int t, int dim) {
    const std::int64_t rows = static_cast<std::int64_t>(batch) * t;
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < rows; ++r) {
        int b = static_cast<int>(r / t);
        const double* g = mod.ptr() + (static_cast<std::int64_t>(b) * 6 + gate_slot) * dim;
        const double* br = branch.ptr() + r * dim;
        double* xr = x.ptr() + r * dim;
        for (int d = 0; d < dim; ++d) xr[d] += g[d] * br[d];
    }
}

// dbranch = dx * gate; dmod[gate] += sum_t dx * branch
void gated_add_backward(const Tensor& dx, const Tensor& branch, const Tensor& mod,
                        Tensor& dbranch, Tensor& dmod, int gate_slot,
                        int batch, int t, int dim) {
    const std::int64_t rows = static_cast<std::int64_t>(batch) * t;
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < rows; ++r) {
        int b = static_cast<int>(r / t);
        const double* g = mod.ptr() + (static_cast<std::int64_t>(b) * 6 + gate_slot) * dim;
        const double* dxr = dx.ptr() + r * dim;
        double* dbr = dbranch.ptr() + r * dim;
        for (int d = 0; d < dim; ++d) dbr[d] = dxr[d] * g[d];
    }
#pragma omp parallel for collapse(2) schedule(static)
    for (int b = 0; b < batch; ++b) {
        for (int d = 0; d < dim; ++d) {
            double acc = 0.0;
            for (int i = 0; i < t; ++i) {
                std::int64_t r = static_cast<std::int64_t>(b) * t + i;
                acc += dx[r * dim + d] * branch[r * dim + d];
            }
            dmod[(static_cast<std::int64_t>(b) * 6 + gate_slot) * dim + d] += acc;
        }
    }
}

// Inverted dropout. Mask values are 0 or 1/(1-p); drawn serially so streams
// stay reproducible for any thread count.
void dropout_make_mask(Tensor& mask, double p, Rng& rng) {
    const double keep = 1.0 / (1.0 - p);
    for (std::int64_t i = 0; i < mask.numel(); ++i)
        mask[i] = (rng.uniform() >= p) ? keep : 0.0;
}

void apply_mask(const Tensor& x, const Tensor& mask, Tensor& y) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < x.numel(); ++i) y[i] = x[i] * mask[i];
}

void add_into(Tensor& dst, const Tensor& src) {
#pragma omp parallel for schedule(static)
    for (std::int64_t i = 0; i < dst.numel(); ++i) dst[i] += src[i];
}

void init_xavier(Tensor& w, int fan_in, int fan_out, Rng& rng) {
    const double a = std::sqrt(6.0 / (fan_in + fan_out));
    for (auto& v : w.data) v = (2.0 * rng.uniform() - 1.0) * a;
}

void init_normal(Tensor& w, double std, Rng& rng) {
    for (auto& v : w.data) v = std * rng.normal();
}

}  // namespace

// ---------------------------------------------------------------------------
// Config / token plumbing
// ---------------------------------------------------------------------------

void ModelConfig::validate() const {
    if (image_size < 1 || patch_size < 1) throw std::invalid_argument("config: non-positive size");
    if (image_size % patch_size != 0)
        throw std::invalid_argument("config: image_size must be divisible by patch_size");
    if (channels < 1) throw std::invalid_argument("config: channels must be >= 1");
    if (dit_depth < 1 || dec_depth < 1) throw std::invalid_argument("config: depths must be >= 1");
    if (dec_dim < dit_dim) throw std::invalid_argument("config: dec_dim must be >= dit_dim");
    if (dit_dim % heads != 0 || dec_dim % heads != 0)
        throw std::invalid_argument("config: dims must be divisible by heads");
    if (dit_dim % 2 != 0 || dec_dim % 2 != 0)
        throw std::invalid_argument("config: dims must be even");
    if (in_context_start_block < 0 || in_context_start_block >= dit_depth)
        throw std::invalid_argument("config: in_context_start_block out of range");
    if (irepa_tap_block < 0 || irepa_tap_block >= dit_depth)
        throw std::invalid_argument("config: irepa_tap_block out of range");
    if (n_class_tokens < 1) throw std::invalid_argument("config: n_class_tokens must be >= 1");
    if (num_classes < 1) throw std::invalid_argument("config: num_classes must be >= 1");
    if (dropout < 0.0 || dropout >= 1.0) throw std::invalid_argument("config: dropout outside [0, 1)");
}

void TokenSequence::check() const {
    if (length() != rows * cols)
        throw std::invalid_argument("token sequence: L != rows * cols");
}

TokenSequence patchify(const Tensor& image, int p) {
    if (image.ndim() != 3) throw std::invalid_argument("patchify: expected H x W x C tensor");
    const int h = static_cast<int>(image.dim(0));
    const int w = static_cast<int>(image.dim(1));
    const int c = static_cast<int>(image.dim(2));
    if (p < 1 || h % p != 0 || w % p != 0)
        throw std::invalid_argument("patchify: dimensions not divisible by patch size");

    TokenSequence out;
    out.rows = h / p;
    out.cols = w / p;
    out.data = Tensor({static_cast<std::int64_t>(out.rows) * out.cols,
                       static_cast<std::int64_t>(p) * p * c});
    const std::int64_t width = out.data.dim(1);
    for (int py = 0; py < out.rows; ++py) {
        for (int px = 0; px < out.cols; ++px) {
            double* tok = out.data.ptr() + (static_cast<std::int64_t>(py) * out.cols + px) * width;
            for (int dy = 0; dy < p; ++dy) {
                const double* src = image.ptr() + ((static_cast<std::int64_t>(py * p + dy)) * w + px * p) * c;
                std::copy(src, src + static_cast<std::int64_t>(p) * c,
                          tok + static_cast<std::int64_t>(dy) * p * c);
            }
        }
    }
    return out;
}

Tensor unpatchify(const TokenSequence& tokens, int p) {
    tokens.check();
    const std::int64_t width = tokens.width();
    if (p < 1 || width % (static_cast<std::int64_t>(p) * p) != 0)
        throw std::invalid_argument("unpatchify: token width is not p*p*C");
    const int c = static_cast<int>(width / (static_cast<std::int64_t>(p) * p));
    const int h = tokens.rows * p;
    const int w = tokens.cols * p;
    Tensor img({h, w, c});
    for (int py = 0; py < tokens.rows; ++py) {
        for (int px = 0; px < tokens.cols; ++px) {
            const double* tok = tokens.data.ptr() + (static_cast<std::int64_t>(py) * tokens.cols + px) * width;
            for (int dy = 0; dy < p; ++dy) {
                double* dst = img.ptr() + ((static_cast<std::int64_t>(py * p + dy)) * w + px * p) * c;
                std::copy(tok + static_cast<std::int64_t>(dy) * p * c,
                          tok + static_cast<std::int64_t>(dy + 1) * p * c, dst);
            }
        }
    }
    return img;
}

// ---------------------------------------------------------------------------
// Construction
// ---------------------------------------------------------------------------

static Param mk(const std::string& name, std::vector<std::int64_t> shape) {
    Param p;
    p.name = name;
    p.value = Tensor(shape);
    p.grad = Tensor(shape);
    return p;
}

Model::Model(const ModelConfig& cfg, std::uint64_t init_seed) : cfg_(cfg) {
    cfg_.validate();
    const int d = cfg_.dit_dim, dd = cfg_.dec_dim, pc = cfg_.token_width();
    const int l = cfg_.seq_len(), k = cfg_.n_class_tokens;

    patch_embed_w_ = mk("dit.patch_embed.weight", {d, pc});
    patch_embed_b_ = mk("dit.patch_embed.bias", {d});
    pos_embed_ = mk("dit.pos_embed", {l, d});
    class_embed_ = mk("dit.class_embed", {cfg_.num_classes + 1, d});
    class_pos_embed_ = mk("dit.class_pos_embed", {k, d});
    dit_t_fc1_w_ = mk("dit.t_embed.fc1.weight", {d, d});
    dit_t_fc1_b_ = mk("dit.t_embed.fc1.bias", {d});
    dit_t_fc2_w_ = mk("dit.t_embed.fc2.weight", {d, d});
    dit_t_fc2_b_ = mk("dit.t_embed.fc2.bias", {d});

    auto mk_block = [](const std::string& prefix, int dim) {
        BlockParams b;
        b.adaln_w = mk(prefix + ".adaln.weight", {6 * dim, dim});
        b.adaln_b = mk(prefix + ".adaln.bias", {6 * dim});
        b.qkv_w = mk(prefix + ".attn.qkv.weight", {3 * dim, dim});
        b.qkv_b = mk(prefix + ".attn.qkv.bias", {3 * dim});
        b.proj_w = mk(prefix + ".attn.proj.weight", {dim, dim});
        b.proj_b = mk(prefix + ".attn.proj.bias", {dim});
        b.fc1_w = mk(prefix + ".mlp.fc1.weight", {4 * dim, dim});
        b.fc1_b = mk(prefix + ".mlp.fc1.bias", {4 * dim});
        b.fc2_w = mk(prefix + ".mlp.fc2.weight", {dim, 4 * dim});
        b.fc2_b = mk(prefix + ".mlp.fc2.bias", {dim});
        return b;
    };
    for (int i = 0; i < cfg_.dit_depth; ++i)
        dit_.push_back(mk_block("dit.block" + std::to_string(i), d));

    bridge_w_ = mk("bridge.weight", {dd, d});
    bridge_b_ = mk("bridge.bias", {dd});
    reproj_w_ = mk("dec.reproj.weight", {dd, pc});
    reproj_b_ = mk("dec.reproj.bias", {dd});
    dec_t_fc1_w_ = mk("dec.t_embed.fc1.weight", {dd, dd});
    dec_t_fc1_b_ = mk("dec.t_embed.fc1.bias", {dd});
    dec_t_fc2_w_ = mk("dec.t_embed.fc2.weight", {dd, dd});
    dec_t_fc2_b_ = mk("dec.t_embed.fc2.bias", {dd});
    for (int i = 0; i < cfg_.dec_depth; ++i)
        dec_.push_back(mk_block("dec.block" + std::to_string(i), dd));
    final_w_ = mk("final.proj.weight", {pc, dd});
    final_b_ = mk("final.proj.bias", {pc});

    // Init: xavier linears, N(0, 0.02) embeddings, zero adaLN and final
    // projection (AdaLN-Zero: every block starts as the identity).
    Rng rng(init_seed);
    init_xavier(patch_embed_w_.value, pc, d, rng);
    init_normal(pos_embed_.value, 0.02, rng);
    init_normal(class_embed_.value, 0.02, rng);
    init_normal(class_pos_embed_.value, 0.02, rng);
    init_xavier(dit_t_fc1_w_.value, d, d, rng);
    init_xavier(dit_t_fc2_w_.value, d, d, rng);
    for (auto& b : dit_) {
        init_xavier(b.qkv_w.value, d, 3 * d, rng);
        init_xavier(b.proj_w.value, d, d, rng);
        init_xavier(b.fc1_w.value, d, 4 * d, rng);
        init_xavier(b.fc2_w.value, 4 * d, d, rng);
    }
    init_xavier(bridge_w_.value, d, dd, rng);
    init_xavier(reproj_w_.value, pc, dd, rng);
    init_xavier(dec_t_fc1_w_.value, dd, dd, rng);
    init_xavier(dec_t_fc2_w_.value, dd, dd, rng);
    for (auto& b : dec_) {
        init_xavier(b.qkv_w.value, dd, 3 * dd, rng);
        init_xavier(b.proj_w.value, dd, dd, rng);
        init_xavier(b.fc1_w.value, dd, 4 * dd, rng);
        init_xavier(b.fc2_w.value, 4 * dd, dd, rng);
    }
}

void Model::collect(std::vector<ParamView>& out) const {
    auto add = [&out](const Param& p) {
        out.push_back({p.name, const_cast<Tensor*>(&p.value), const_cast<Tensor*>(&p.grad)});
    };
    add(patch_embed_w_);
    add(patch_embed_b_);
    add(pos_embed_);
    add(class_embed_);
    add(class_pos_embed_);
    add(dit_t_fc1_w_);
    add(dit_t_fc1_b_);
    add(dit_t_fc2_w_);
    add(dit_t_fc2_b_);
    auto add_block = [&add](const BlockParams& b) {
        add(b.adaln_w);
        add(b.adaln_b);
        add(b.qkv_w);
        add(b.qkv_b);
        add(b.proj_w);
        add(b.proj_b);
        add(b.fc1_w);
        add(b.fc1_b);
        add(b.fc2_w);
        add(b.fc2_b);
    };
    for (const auto& b : dit_) add_block(b);
    add(bridge_w_);
    add(bridge_b_);
    add(reproj_w_);
    add(reproj_b_);
    add(dec_t_fc1_w_);
    add(dec_t_fc1_b_);
    add(dec_t_fc2_w_);
    add(dec_t_fc2_b_);
    for (const auto& b : dec_) add_block(b);
    add(final_w_);
    add(final_b_);
}

std::vector<ParamView> Model::params() {
    std::vector<ParamView> out;
    collect(out);
    return out;
}

std::vector<std::pair<std::string, const Tensor*>> Model::named_values() const {
    std::vector<ParamView> views;
    collect(views);
    std::vector<std::pair<std::string, const Tensor*>> out;
    out.reserve(views.size());
    for (const auto& v : views) out.emplace_back(v.name, v.value);
    return out;
}

std::int64_t Model::param_count() const {
    std::vector<ParamView> views;
    collect(views);
    std::int64_t n = 0;
    for (const auto& v : views) n += v.value->numel();
    return n;
}

void Model::zero_grads() {
    for (auto& v : params()) v.grad->zero();
}

// ---------------------------------------------------------------------------
// Conditioning
// ---------------------------------------------------------------------------

// c = fc2(silu(fc1(sincos(t)))) [+ class_embed], plus silu(c) for adaLN input.
static void cond_forward(const std::vector<double>& ts, const std::vector<int>* cls,
                         const Tensor& class_embed, const Tensor& fc1_w, const Tensor& fc1_b,
                         const Tensor& fc2_w, const Tensor& fc2_b, int dim, CondCache& cc) {
    const int batch = static_cast<int>(ts.size());
    cc.sin = Tensor({batch, dim});
    for (int b = 0; b < batch; ++b) sincos_time_embed(ts[b], cc.sin.ptr() + static_cast<std::int64_t>(b) * dim, dim);
    cc.h1 = Tensor({batch, dim});
    linear_forward(cc.sin, fc1_w, fc1_b, cc.h1, batch, dim, dim);
    cc.a1 = Tensor({batch, dim});
    kernels::silu_forward(cc.h1.ptr(), cc.a1.ptr(), cc.h1.numel());
    cc.c = Tensor({batch, dim});
    linear_forward(cc.a1, fc2_w, fc2_b, cc.c, batch, dim, dim);
    if (cls) {
        for (int b = 0; b < batch; ++b) {
            const double* row = class_embed.ptr() + static_cast<std::int64_t>((*cls)[b]) * dim;
            double* cb = cc.c.ptr() + static_cast<std::int64_t>(b) * dim;
            for (int d = 0; d < dim; ++d) cb[d] += row[d];
        }
    }
    cc.silu_c = Tensor({batch, dim});
    kernels::silu_forward(cc.c.ptr(), cc.silu_c.ptr(), cc.c.numel());
}

static void cond_backward(const CondCache& cc, const Tensor& d_silu_c,
                          const std::vector<int>* cls, Tensor* class_embed_grad,
                          const Tensor& fc1_w, Tensor& fc1_gw, Tensor& fc1_gb,
                          const Tensor& fc2_w, Tensor& fc2_gw, Tensor& fc2_gb, int dim) {
    const int batch = static_cast<int>(cc.c.dim(0));
    Tensor dc({batch, dim});
    kernels::silu_backward(cc.c.ptr(), d_silu_c.ptr(), dc.ptr(), dc.numel());
    if (cls) {
        for (int b = 0; b < batch; ++b) {
            double* row = class_embed_grad->ptr() + static_cast<std::int64_t>((*cls)[b]) * dim;
            const double* dcb = dc.ptr() + static_cast<std::int64_t>(b) * dim;
            for (int d = 0; d < dim; ++d) row[d] += dcb[d];
        }
    }
    Tensor da1({batch, dim});
    linear_backward(cc.a1, fc2_w, dc, &da1, fc2_gw, fc2_gb, batch, dim, dim);
    Tensor dh1({batch, dim});
    kernels::silu_backward(cc.h1.ptr(), da1.ptr(), dh1.ptr(), dh1.numel());
    linear_backward(cc.sin, fc1_w, dh1, nullptr, fc1_gw, fc1_gb, batch, dim, dim);
}

// ---------------------------------------------------------------------------
// Transformer block
// ---------------------------------------------------------------------------

static void block_forward_impl(const Tensor& adaln_w, const Tensor& adaln_b, const Tensor& qkv_w,
                               const Tensor& qkv_b, const Tensor& proj_w, const Tensor& proj_b,
                               const Tensor& fc1_w, const Tensor& fc1_b, const Tensor& fc2_w,
                               const Tensor& fc2_b, Tensor& x, const Tensor& silu_c, int batch,
                               int t, int dim, int heads, double dropout, bool training, Rng* rng,
                               BlockCache& c) {
    const int rows = batch * t;
    const int hidden = 4 * dim;
    c.t = t;
    c.x_in = x;

    c.mod = Tensor({batch, 6 * dim});
    linear_forward(silu_c, adaln_w, adaln_b, c.mod, batch, dim, 6 * dim);

    c.ln1_out = Tensor({rows, dim});
    c.ln1_mean = Tensor({rows});
    c.ln1_rstd = Tensor({rows});
    kernels::layernorm_forward(x.ptr(), c.ln1_out.ptr(), c.ln1_mean.ptr(), c.ln1_rstd.ptr(), rows, dim);
    c.mod1 = Tensor({rows, dim});
    modulate_forward(c.ln1_out, c.mod, c.mod1, batch, t, dim, kShiftA, kScaleA);

    c.qkv = Tensor({rows, 3 * dim});
    linear_forward(c.mod1, qkv_w, qkv_b, c.qkv, rows, dim, 3 * dim);
    c.probs = Tensor({batch, heads, t, t});
    c.attn_merged = Tensor({rows, dim});
    kernels::attention_forward(c.qkv.ptr(), c.attn_merged.ptr(), c.probs.ptr(), batch, t, heads, dim);

    Tensor proj_out({rows, dim});
    linear_forward(c.attn_merged, proj_w, proj_b, proj_out, rows, dim, dim);
    const bool drop = training && dropout > 0.0;
    if (drop) {
        c.drop1_mask = Tensor({rows, dim});
        dropout_make_mask(c.drop1_mask, dropout, *rng);
        c.attn_branch = Tensor({rows, dim});
        apply_mask(proj_out, c.drop1_mask, c.attn_branch);
    } else {
        c.attn_branch = std::move(proj_out);
    }
    gated_add(x, c.attn_branch, c.mod, kGateA, batch, t, dim);
    c.x_mid = x;

    c.ln2_out = Tensor({rows, dim});
    c.ln2_mean = Tensor({rows});
    c.ln2_rstd = Tensor({rows});
    kernels::layernorm_forward(x.ptr(), c.ln2_out.ptr(), c.ln2_mean.ptr(), c.ln2_rstd.ptr(), rows, dim);
    c.mod2 = Tensor({rows, dim});
    modulate_forward(c.ln2_out, c.mod, c.mod2, batch, t, dim, kShiftM, kScaleM);

    c.fc1_out = Tensor({rows, hidden});
    linear_forward(c.mod2, fc1_w, fc1_b, c.fc1_out, rows, dim, hidden);
    c.gelu_out = Tensor({rows, hidden});
    kernels::gelu_forward(c.fc1_out.ptr(), c.gelu_out.ptr(), c.fc1_out.numel());
    if (drop) {
        c.drop2_mask = Tensor({rows, hidden});
        dropout_make_mask(c.drop2_mask, dropout, *rng);
        c.mlp_hidden = Tensor({rows, hidden});
        apply_mask(c.gelu_out, c.drop2_mask, c.mlp_hidden);
    } else {
        c.mlp_hidden = c.gelu_out;
    }
    c.mlp_out = Tensor({rows, dim});
    linear_forward(c.mlp_hidden, fc2_w, fc2_b, c.mlp_out, rows, hidden, dim);
    gated_add(x, c.mlp_out, c.mod, kGateM, batch, t, dim);
}

// dx holds d(block output) on entry and d(block input) on exit;
// d_silu_c accumulates the adaLN conditioning gradient.
static void block_backward_impl(const Tensor& adaln_w, Tensor& adaln_gw, Tensor& adaln_gb,
                                const Tensor& qkv_w, Tensor& qkv_gw, Tensor& qkv_gb,
                                const Tensor& proj_w, Tensor& proj_gw, Tensor& proj_gb,
                                const Tensor& fc1_w, Tensor& fc1_gw, Tensor& fc1_gb,
                                const Tensor& fc2_w, Tensor& fc2_gw, Tensor& fc2_gb,
                                const Tensor& silu_c, const BlockCache& c, Tensor& dx,
                                Tensor& d_silu_c, int batch, int dim, int heads) {
    const int t = c.t;
    const int rows = batch * t;
    const int hidden = 4 * dim;
    Tensor dmod({batch, 6 * dim});

    // x_out = x_mid + gate_m * mlp_out
    Tensor dmlp_out({rows, dim});
    gated_add_backward(dx, c.mlp_out, c.mod, dmlp_out, dmod, kGateM, batch, t, dim);

    Tensor dmlp_hidden({rows, hidden});
    linear_backward(c.mlp_hidden, fc2_w, dmlp_out, &dmlp_hidden, fc2_gw, fc2_gb, rows, hidden, dim);
    Tensor dgelu = std::move(dmlp_hidden);
    if (c.drop2_mask.numel() > 0) apply_mask(dgelu, c.drop2_mask, dgelu);
    Tensor dfc1({rows, hidden});
    kernels::gelu_backward(c.fc1_out.ptr(), dgelu.ptr(), dfc1.ptr(), dfc1.numel());
    Tensor dmod2({rows, dim});
    linear_backward(c.mod2, fc1_w, dfc1, &dmod2, fc1_gw, fc1_gb, rows, dim, hidden);

    Tensor dln2({rows, dim});
    modulate_backward(dmod2, c.ln2_out, c.mod, dln2, dmod, batch, t, dim, kShiftM, kScaleM);
    Tensor dx_ln2({rows, dim});
    kernels::layernorm_backward(dln2.ptr(), c.x_mid.ptr(), c.ln2_mean.ptr(), c.ln2_rstd.ptr(),
                                dx_ln2.ptr(), rows, dim);
    add_into(dx, dx_ln2);  // dx now holds d(x_mid)

    // x_mid = x_in + gate_a * attn_branch
    Tensor dattn_branch({rows, dim});
    gated_add_backward(dx, c.attn_branch, c.mod, dattn_branch, dmod, kGateA, batch, t, dim);
    if (c.drop1_mask.numel() > 0) apply_mask(dattn_branch, c.drop1_mask, dattn_branch);
    Tensor dattn_merged({rows, dim});
    linear_backward(c.attn_merged, proj_w, dattn_branch, &dattn_merged, proj_gw, proj_gb, rows, dim, dim);

    Tensor dqkv({rows, 3 * dim});
    Tensor dprobs_scratch({batch, heads, t, t});
    kernels::attention_backward(c.qkv.ptr(), c.probs.ptr(), dattn_merged.ptr(), dqkv.ptr(),
                                dprobs_scratch.ptr(), batch, t, heads, dim);
    Tensor dmod1({rows, dim});
    linear_backward(c.mod1, qkv_w, dqkv, &dmod1, qkv_gw, qkv_gb, rows, dim, 3 * dim);

    Tensor dln1({rows, dim});
    modulate_backward(dmod1, c.ln1_out, c.mod, dln1, dmod, batch, t, dim, kShiftA, kScaleA);
    Tensor dx_ln1({rows, dim});
    kernels::layernorm_backward(dln1.ptr(), c.x_in.ptr(), c.ln1_mean.ptr(), c.ln1_rstd.ptr(),
                                dx_ln1.ptr(), rows, dim);
    add_into(dx, dx_ln1);  // dx now holds d(x_in)

    Tensor d_silu_partial({batch, dim});
    linear_backward(silu_c, adaln_w, dmod, &d_silu_partial, adaln_gw, adaln_gb, batch, dim, 6 * dim);
    add_into(d_silu_c, d_silu_partial);
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

Tensor Model::run_dit(const Tensor& patch_tokens, const std::vector<double>& ts,
                      const std::vector<int>& cls, bool training, Rng* rng,
                      ForwardCache* cache, Tensor* tapped_out) const {
    const int batch = static_cast<int>(ts.size());
    const int l = cfg_.seq_len(), d = cfg_.dit_dim, k = cfg_.n_class_tokens;
    const int pc = cfg_.token_width();
    for (int id : cls)
        if (id < 0 || id > cfg_.num_classes)
            throw std::invalid_argument("model: class id out of range");

    cond_forward(ts, &cls, class_embed_.value, dit_t_fc1_w_.value, dit_t_fc1_b_.value,
                 dit_t_fc2_w_.value, dit_t_fc2_b_.value, d, cache->dit_cond);

    // embed + learned positional table
    Tensor x({static_cast<std::int64_t>(batch) * l, d});
    linear_forward(patch_tokens, patch_embed_w_.value, patch_embed_b_.value, x, batch * l, pc, d);
#pragma omp parallel for schedule(static)
    for (std::int64_t r = 0; r < x.dim(0); ++r) {
        const double* pe = pos_embed_.value.ptr() + (r % l) * d;
        double* xr = x.ptr() + r * d;
        for (int j = 0; j < d; ++j) xr[j] += pe[j];
    }

    cache->dit_blocks.assign(cfg_.dit_depth, BlockCache{});
    int t = l;
    for (int i = 0; i < cfg_.dit_depth; ++i) {
        if (i == cfg_.in_context_start_block) {
            // prepend the replicated class tokens, each with its own position
            Tensor x2({static_cast<std::int64_t>(batch) * (k + l), d});
            for (int b = 0; b < batch; ++b) {
                const double* ce = class_embed_.value.ptr() + static_cast<std::int64_t>(cls[b]) * d;
                for (int j = 0; j < k; ++j) {
                    double* dst = x2.ptr() + (static_cast<std::int64_t>(b) * (k + l) + j) * d;
                    const double* pe = class_pos_embed_.value.ptr() + static_cast<std::int64_t>(j) * d;
                    for (int q = 0; q < d; ++q) dst[q] = ce[q] + pe[q];
                }
                std::copy(x.ptr() + static_cast<std::int64_t>(b) * l * d,
                          x.ptr() + static_cast<std::int64_t>(b + 1) * l * d,
                          x2.ptr() + (static_cast<std::int64_t>(b) * (k + l) + k) * d);
            }
            x = std::move(x2);
            t = k + l;
        }
        const auto& bp = dit_[i];
        block_forward_impl(bp.adaln_w.value, bp.adaln_b.value, bp.qkv_w.value, bp.qkv_b.value,
                           bp.proj_w.value, bp.proj_b.value, bp.fc1_w.value, bp.fc1_b.value,
                           bp.fc2_w.value, bp.fc2_b.value, x, cache->dit_cond.silu_c, batch, t, d,
                           cfg_.heads, cfg_.dropout, training, rng, cache->dit_blocks[i]);
        if (i == cfg_.irepa_tap_block && tapped_out) {
            *tapped_out = Tensor({static_cast<std::int64_t>(batch) * l, d});
            const int off = (t == k + l) ? k : 0;
            for (int b = 0; b < batch; ++b)
                std::copy(x.ptr() + (static_cast<std::int64_t>(b) * t + off) * d,
                          x.ptr() + (static_cast<std::int64_t>(b) * t + off + l) * d,
                          tapped_out->ptr() + static_cast<std::int64_t>(b) * l * d);
        }
    }

    // strip class tokens; c_s keeps exactly L tokens per image
    Tensor c_s({static_cast<std::int64_t>(batch) * l, d});
    const int off = (t == k + l) ? k : 0;
    for (int b = 0; b < batch; ++b)
        std::copy(x.ptr() + (static_cast<std::int64_t>(b) * t + off) * d,
                  x.ptr() + (static_cast<std::int64_t>(b) * t + off + l) * d,
                  c_s.ptr() + static_cast<std::int64_t>(b) * l * d);
    return c_s;
}

Tensor Model::apply_bridge(const Tensor& c_s) const {
    const int rows = static_cast<int>(c_s.dim(0));
    Tensor up({rows, cfg_.dec_dim});
    linear_forward(c_s, bridge_w_.value, bridge_b_.value, up, rows, cfg_.dit_dim, cfg_.dec_dim);
    return up;
}

Tensor Model::run_decoder(const Tensor& patch_tokens, const Tensor& c_s_up,
                          const std::vector<double>& ts, bool training, Rng* rng,
                          ForwardCache* cache) const {
    const int batch = static_cast<int>(ts.size());
    const int dd = cfg_.dec_dim, pc = cfg_.token_width();
    // no positional table here, so any sequence length is valid
    const int l = static_cast<int>(patch_tokens.dim(0)) / batch;

    cond_forward(ts, nullptr, class_embed_.value, dec_t_fc1_w_.value, dec_t_fc1_b_.value,
                 dec_t_fc2_w_.value, dec_t_fc2_b_.value, dd, cache->dec_cond);

    cache->reproj_out = Tensor({static_cast<std::int64_t>(batch) * l, dd});
    linear_forward(patch_tokens, reproj_w_.value, reproj_b_.value, cache->reproj_out, batch * l, pc, dd);
    Tensor x = cache->reproj_out;
    add_into(x, c_s_up);

    cache->dec_blocks.assign(cfg_.dec_depth, BlockCache{});
    for (int i = 0; i < cfg_.dec_depth; ++i) {
        const auto& bp = dec_[i];
        block_forward_impl(bp.adaln_w.value, bp.adaln_b.value, bp.qkv_w.value, bp.qkv_b.value,
                           bp.proj_w.value, bp.proj_b.value, bp.fc1_w.value, bp.fc1_b.value,
                           bp.fc2_w.value, bp.fc2_b.value, x, cache->dec_cond.silu_c, batch, l, dd,
                           cfg_.heads, cfg_.dropout, training, rng, cache->dec_blocks[i]);
    }
    return x;
}

Tensor Model::apply_fusion(const Tensor& x_r, const Tensor& c_s_up, Tensor* fused_out) const {
    const int rows = static_cast<int>(x_r.dim(0));
    Tensor fused = x_r;
    add_into(fused, c_s_up);
    Tensor y({rows, cfg_.token_width()});
    linear_forward(fused, final_w_.value, final_b_.value, y, rows, cfg_.dec_dim, cfg_.token_width());
    if (fused_out) *fused_out = std::move(fused);
    return y;
}

// ---------------------------------------------------------------------------
// Forward / backward
// ---------------------------------------------------------------------------

ForwardResult Model::forward(const Tensor& z, const std::vector<double>& ts,
                             const std::vector<int>& cls, bool training, Rng* rng,
                             ForwardCache* cache) const {
    if (z.ndim() != 4 || z.dim(1) != cfg_.image_size || z.dim(2) != cfg_.image_size ||
        z.dim(3) != cfg_.channels)
        throw std::invalid_argument("model: input must be [B, H, W, C] matching the config");
    const int batch = static_cast<int>(z.dim(0));
    if (static_cast<int>(ts.size()) != batch || static_cast<int>(cls.size()) != batch)
        throw std::invalid_argument("model: ts/cls size must equal batch");
    if (training && cfg_.dropout > 0.0 && rng == nullptr)
        throw std::invalid_argument("model: training forward needs an rng for dropout");

    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.batch = batch;
    c.training = training;
    c.ts = ts;
    c.cls = cls;

    const int l = cfg_.seq_len(), p = cfg_.patch_size, pc = cfg_.token_width();
    c.patches = Tensor({static_cast<std::int64_t>(batch) * l, pc});
    for (int b = 0; b < batch; ++b) {
        Tensor img({cfg_.image_size, cfg_.image_size, cfg_.channels});
        std::copy(z.ptr() + static_cast<std::int64_t>(b) * img.numel(),
                  z.ptr() + static_cast<std::int64_t>(b + 1) * img.numel(), img.ptr());
        TokenSequence seq = patchify(img, p);
        std::copy(seq.data.ptr(), seq.data.ptr() + seq.data.numel(),
                  c.patches.ptr() + static_cast<std::int64_t>(b) * l * pc);
    }

    Tensor tapped;
    c.c_s = run_dit(c.patches, ts, cls, training, rng, &c, &tapped);
    c.c_s_up = apply_bridge(c.c_s);
    c.x_r = run_decoder(c.patches, c.c_s_up, ts, training, rng, &c);
    Tensor y = apply_fusion(c.x_r, c.c_s_up, &c.fused);

    ForwardResult out;
    out.x_pred = Tensor({batch, cfg_.image_size, cfg_.image_size, cfg_.channels});
    const int g = cfg_.grid();
    for (int b = 0; b < batch; ++b) {
        TokenSequence seq;
        seq.rows = g;
        seq.cols = g;
        seq.data = Tensor({l, pc});
        std::copy(y.ptr() + static_cast<std::int64_t>(b) * l * pc,
                  y.ptr() + static_cast<std::int64_t>(b + 1) * l * pc, seq.data.ptr());
        Tensor img = unpatchify(seq, p);
        std::copy(img.ptr(), img.ptr() + img.numel(),
                  out.x_pred.ptr() + static_cast<std::int64_t>(b) * img.numel());
    }
    out.tapped = std::move(tapped);
    out.tapped.shape = {batch, l, cfg_.dit_dim};
    out.c_s = c.c_s;
    out.c_s.shape = {batch, l, cfg_.dit_dim};
    return out;
}

void Model::backward(const ForwardCache& c, const Tensor& d_x_pred, const Tensor& d_tapped) {
    const int batch = c.batch;
    const int l = cfg_.seq_len(), d = cfg_.dit_dim, dd = cfg_.dec_dim;
    const int k = cfg_.n_class_tokens, p = cfg_.patch_size, pc = cfg_.token_width();
    if (batch < 1) throw std::invalid_argument("model backward: cache is empty");

    // d(final tokens): patchify the image-space gradient
    Tensor dy({static_cast<std::int64_t>(batch) * l, pc});
    for (int b = 0; b < batch; ++b) {
        Tensor img({cfg_.image_size, cfg_.image_size, cfg_.channels});
        std::copy(d_x_pred.ptr() + static_cast<std::int64_t>(b) * img.numel(),
                  d_x_pred.ptr() + static_cast<std::int64_t>(b + 1) * img.numel(), img.ptr());
        TokenSequence seq = patchify(img, p);
        std::copy(seq.data.ptr(), seq.data.ptr() + seq.data.numel(),
                  dy.ptr() + static_cast<std::int64_t>(b) * l * pc);
    }

    // final projection; fused = x_r + c_s_up
    Tensor dfused({static_cast<std::int64_t>(batch) * l, dd});
    linear_backward(c.fused, final_w_.value, dy, &dfused, final_w_.grad, final_b_.grad,
                    batch * l, dd, pc);
    Tensor dx = dfused;          // d(x_r)
    Tensor dc_s_up = dfused;     // fusion contribution

    // decoder blocks
    Tensor d_silu_dec({batch, dd});
    for (int i = cfg_.dec_depth - 1; i >= 0; --i) {
        auto& bp = dec_[i];
        block_backward_impl(bp.adaln_w.value, bp.adaln_w.grad, bp.adaln_b.grad, bp.qkv_w.value,
                            bp.qkv_w.grad, bp.qkv_b.grad, bp.proj_w.value, bp.proj_w.grad,
                            bp.proj_b.grad, bp.fc1_w.value, bp.fc1_w.grad, bp.fc1_b.grad,
                            bp.fc2_w.value, bp.fc2_w.grad, bp.fc2_b.grad, c.dec_cond.silu_c,
                            c.dec_blocks[i], dx, d_silu_dec, batch, dd, cfg_.heads);
    }
    cond_backward(c.dec_cond, d_silu_dec, nullptr, nullptr, dec_t_fc1_w_.value,
                  dec_t_fc1_w_.grad, dec_t_fc1_b_.grad, dec_t_fc2_w_.value, dec_t_fc2_w_.grad,
                  dec_t_fc2_b_.grad, dd);

    // decoder input = reproj(patches) + c_s_up
    linear_backward(c.patches, reproj_w_.value, dx, nullptr, reproj_w_.grad, reproj_b_.grad,
                    batch * l, pc, dd);
    add_into(dc_s_up, dx);

    // bridge
    Tensor dc_s({static_cast<std::int64_t>(batch) * l, d});
    linear_backward(c.c_s, bridge_w_.value, dc_s_up, &dc_s, bridge_w_.grad, bridge_b_.grad,
                    batch * l, d, dd);

    // expand to the full (possibly class-token-carrying) final sequence
    const int t_final = c.dit_blocks.back().t;
    const int off = (t_final == k + l) ? k : 0;
    Tensor dxt({static_cast<std::int64_t>(batch) * t_final, d});
    for (int b = 0; b < batch; ++b)
        std::copy(dc_s.ptr() + static_cast<std::int64_t>(b) * l * d,
                  dc_s.ptr() + static_cast<std::int64_t>(b + 1) * l * d,
                  dxt.ptr() + (static_cast<std::int64_t>(b) * t_final + off) * d);

    Tensor d_silu_dit({batch, d});
    Tensor dflow = std::move(dxt);
    for (int i = cfg_.dit_depth - 1; i >= 0; --i) {
        const int t = c.dit_blocks[i].t;
        if (i == cfg_.irepa_tap_block && d_tapped.numel() > 0) {
            const int toff = (t == k + l) ? k : 0;
            for (int b = 0; b < batch; ++b) {
                const double* src = d_tapped.ptr() + static_cast<std::int64_t>(b) * l * d;
                double* dst = dflow.ptr() + (static_cast<std::int64_t>(b) * t + toff) * d;
                for (std::int64_t q = 0; q < static_cast<std::int64_t>(l) * d; ++q) dst[q] += src[q];
            }
        }
        auto& bp = dit_[i];
        block_backward_impl(bp.adaln_w.value, bp.adaln_w.grad, bp.adaln_b.grad, bp.qkv_w.value,
                            bp.qkv_w.grad, bp.qkv_b.grad, bp.proj_w.value, bp.proj_w.grad,
                            bp.proj_b.grad, bp.fc1_w.value, bp.fc1_w.grad, bp.fc1_b.grad,
                            bp.fc2_w.value, bp.fc2_w.grad, bp.fc2_b.grad, c.dit_cond.silu_c,
                            c.dit_blocks[i], dflow, d_silu_dit, batch, d, cfg_.heads);
        if (i == cfg_.in_context_start_block && t == k + l) {
            // undo the prepend: class-token rows feed the embeddings
            Tensor dnext({static_cast<std::int64_t>(batch) * l, d});
            for (int b = 0; b < batch; ++b) {
                double* ce = class_embed_.grad.ptr() + static_cast<std::int64_t>(c.cls[b]) * d;
                for (int j = 0; j < k; ++j) {
                    const double* src = dflow.ptr() + (static_cast<std::int64_t>(b) * t + j) * d;
                    double* pe = class_pos_embed_.grad.ptr() + static_cast<std::int64_t>(j) * d;
                    for (int q = 0; q < d; ++q) {
                        ce[q] += src[q];
                        pe[q] += src[q];
                    }
                }
                std::copy(dflow.ptr() + (static_cast<std::int64_t>(b) * t + k) * d,
                          dflow.ptr() + (static_cast<std::int64_t>(b) * t + k + l) * d,
                          dnext.ptr() + static_cast<std::int64_t>(b) * l * d);
            }
            dflow = std::move(dnext);
        }
    }
    cond_backward(c.dit_cond, d_silu_dit, &c.cls, &class_embed_.grad, dit_t_fc1_w_.value,
                  dit_t_fc1_w_.grad, dit_t_fc1_b_.grad, dit_t_fc2_w_.value, dit_t_fc2_w_.grad,
                  dit_t_fc2_b_.grad, d);

    // embedding: x0 = patch_embed(patches) + pos_embed
    for (std::int64_t r = 0; r < dflow.dim(0); ++r) {
        double* pe = pos_embed_.grad.ptr() + (r % l) * d;
        const double* src = dflow.ptr() + r * d;
        for (int q = 0; q < d; ++q) pe[q] += src[q];
    }
    linear_backward(c.patches, patch_embed_w_.value, dflow, nullptr, patch_embed_w_.grad,
                    patch_embed_b_.grad, batch * l, pc, d);
}

// ---------------------------------------------------------------------------
// Spec-surface single-sequence stages
// ---------------------------------------------------------------------------

DitOutput Model::dit_forward(const TokenSequence& z_tokens, const ConditioningContext& ctx) const {
    z_tokens.check();
    if (z_tokens.width() != cfg_.token_width())
        throw std::invalid_argument("dit_forward: token width must be p*p*C");
    if (z_tokens.length() != cfg_.seq_len())
        throw std::invalid_argument("dit_forward: sequence length mismatch");
    if (ctx.class_id < 0 || ctx.class_id > cfg_.num_classes)
        throw std::invalid_argument("dit_forward: class id out of range");

    ForwardCache cache;
    Tensor tapped;
    std::vector<double> ts{ctx.t};
    std::vector<int> cls{ctx.class_id};
    Tensor c_s = run_dit(z_tokens.data, ts, cls, false, nullptr, &cache, &tapped);

    DitOutput out;
    out.c_s.data = std::move(c_s);
    out.c_s.rows = z_tokens.rows;
    out.c_s.cols = z_tokens.cols;
    out.tapped.data = std::move(tapped);
    out.tapped.rows = z_tokens.rows;
    out.tapped.cols = z_tokens.cols;
    return out;
}

TokenSequence Model::bridge_up(const TokenSequence& c_s) const {
    c_s.check();
    if (c_s.width() != cfg_.dit_dim)
        throw std::invalid_argument("bridge_up: token width must be D");
    TokenSequence out;
    out.data = apply_bridge(c_s.data);
    out.rows = c_s.rows;
    out.cols = c_s.cols;
    return out;
}

TokenSequence Model::decoder_forward(const TokenSequence& z_tokens, const TokenSequence& c_s_up,
                                     const ConditioningContext& ctx) const {
    z_tokens.check();
    c_s_up.check();
    if (z_tokens.width() != cfg_.token_width())
        throw std::invalid_argument("decoder_forward: token width must be p*p*C");
    if (c_s_up.width() != cfg_.dec_dim)
        throw std::invalid_argument("decoder_forward: condition width must be n*D");
    if (z_tokens.length() != c_s_up.length())
        throw std::invalid_argument("decoder_forward: sequence length mismatch");

    ForwardCache cache;
    std::vector<double> ts{ctx.t};
    TokenSequence out;
    out.data = run_decoder(z_tokens.data, c_s_up.data, ts, false, nullptr, &cache);
    out.rows = z_tokens.rows;
    out.cols = z_tokens.cols;
    return out;
}

Tensor Model::fuse_and_project(const TokenSequence& x_r, const TokenSequence& c_s_up) const {
    x_r.check();
    c_s_up.check();
    if (x_r.width() != cfg_.dec_dim || c_s_up.width() != cfg_.dec_dim)
        throw std::invalid_argument("fuse_and_project: widths must be n*D");
    if (x_r.length() != c_s_up.length())
        throw std::invalid_argument("fuse_and_project: length mismatch");

    Tensor y = apply_fusion(x_r.data, c_s_up.data, nullptr);
    TokenSequence seq;
    seq.data = std::move(y);
    seq.rows = x_r.rows;
    seq.cols = x_r.cols;
    return unpatchify(seq, cfg_.patch_size);
}

}  // namespace fb
