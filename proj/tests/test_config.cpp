#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdio>
#include <fstream>

#include "fb/config.hpp"

using namespace fb;

TEST_CASE("empty config yields the documented defaults") {
    auto cfg = parse_config_text("");
    CHECK(cfg.sampler.steps == 50);
    CHECK(cfg.sampler.t_lo == 0.1);
    CHECK(cfg.sampler.t_hi == 0.95);
    CHECK(cfg.train.lr == 2e-4);
    CHECK(cfg.model.dropout == 0.2);
    CHECK(cfg.train.class_drop_prob == 0.1);
    CHECK(cfg.train.adam_beta1 == 0.9);
    CHECK(cfg.train.adam_beta2 == 0.95);
    CHECK(cfg.train.time_sampler.mu == -0.8);
    CHECK(cfg.train.time_sampler.sigma == 0.8);
    CHECK(cfg.train.clip.min_one_minus_t == 0.05);
    CHECK(cfg.model.n_class_tokens == 32);
}

TEST_CASE("presets match the published size table column-for-column") {
    struct Row {
        const char* name;
        int dit_depth, dec_depth, dit_dim, dec_dim, heads, start, tap;
    };
    const Row rows[] = {
        {"B", 10, 2, 768, 1536, 12, 4, 4},
        {"L", 20, 4, 1024, 2048, 16, 8, 10},
        {"H", 28, 4, 1280, 2048, 16, 10, 10},
    };
    for (const auto& r : rows) {
        for (int image_size : {256, 512}) {
            ModelConfig m = preset_model(r.name, image_size);
            CHECK(m.dit_depth == r.dit_depth);
            CHECK(m.dec_depth == r.dec_depth);
            CHECK(m.dit_dim == r.dit_dim);
            CHECK(m.dec_dim == r.dec_dim);
            CHECK(m.heads == r.heads);
            CHECK(m.in_context_start_block == r.start);
            CHECK(m.irepa_tap_block == r.tap);
            CHECK(m.patch_size == image_size / 16);
            CHECK(m.n_class_tokens == 32);
            CHECK(m.dropout == 0.2);
        }
    }
    CHECK_THROWS_AS(preset_model("XL", 256), ConfigError);
}

TEST_CASE("preset expansion via the preset key") {
    auto cfg = parse_config_text("preset: L\nmodel.image_size: 512\n");
    CHECK(cfg.model.dit_depth == 20);
    CHECK(cfg.model.patch_size == 32);
    CHECK(cfg.model.dec_dim == 2048);
}

TEST_CASE("invariant violations carry key context") {
    CHECK_THROWS_AS(parse_config_text("model.patch_size: 15\n"), ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("train.lr: fast\n"), doctest::Contains("train.lr"),
                         ConfigError);
    CHECK_THROWS_WITH_AS(parse_config_text("nonsense.key: 1\n"), doctest::Contains("nonsense.key"),
                         ConfigError);
    CHECK_THROWS_AS(parse_config_text("model.patch_size: 16\nmodel.patch_size: 8\n"), ConfigError);
}

TEST_CASE("bottleneck is accepted verbatim but unused; decoder tap flag reserved") {
    auto cfg = parse_config_text("model.bottleneck: 256\nmodel.irepa_decoder_tap: false\n");
    CHECK(cfg.bottleneck == 256);
    CHECK(cfg.irepa_decoder_tap == false);
    auto cfg2 = parse_config_text("model.bottleneck: 128\n");
    CHECK(cfg2.bottleneck == 128);
}

TEST_CASE("parse(emit(cfg)) round-trips to an equal config") {
    auto cfg = parse_config_text(
        "preset: B\n"
        "model.image_size: 32\n"
        "model.patch_size: 8\n"
        "model.dit_depth: 2\n"
        "model.dec_depth: 1\n"
        "model.dit_dim: 16\n"
        "model.dec_dim: 32\n"
        "model.heads: 2\n"
        "model.n_class_tokens: 4\n"
        "model.in_context_start_block: 1\n"
        "model.irepa_tap_block: 1\n"
        "model.num_classes: 2\n"
        "model.dropout: 0.1\n"
        "train.lr: 0.0007\n"
        "train.seed: 99\n"
        "train.time_mu: -0.75\n"
        "sampler.steps: 17\n"
        "sampler.cfg_scale: 3.1\n"
        "loss.beta_lpips: 0.5\n"
        "dataset.kind: synthetic\n"
        "dataset.size: 32\n"
        "output_dir: /tmp/fbx\n");
    auto round = parse_config_text(emit_config(cfg));
    CHECK(round == cfg);
    // a second emit of the parsed config is byte-identical
    CHECK(emit_config(round) == emit_config(cfg));
}

TEST_CASE("config file parsing from disk") {
    const char* path = "cfg_test.txt";
    {
        std::ofstream f(path);
        f << "# comment line\n\nsampler.steps: 7\n";
    }
    auto cfg = parse_config(path);
    CHECK(cfg.sampler.steps == 7);
    std::remove(path);
    CHECK_THROWS_AS(parse_config("does_not_exist.cfg"), ConfigError);
}
