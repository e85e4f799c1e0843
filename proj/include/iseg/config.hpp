#pragma once

#include <cstdint>
#include <string>

#include "iseg/iat.hpp"
#include "iseg/matching.hpp"

// Flat `key = value` run configuration. Every key has a documented default;
// unknown keys are rejected; the fully resolved table is echoed into the
// output directory so a run is reproducible from its artifacts alone.

namespace iseg {

struct RunConfig {
    // architecture
    std::int64_t d_model = 32;
    std::int64_t ffn_dim = 64;
    std::int64_t enc_layers = 2;
    std::int64_t dec_layers = 2;
    std::int64_t enc_heads = 8, enc_points = 4;
    std::int64_t dec_heads = 8, dec_points = 4;
    std::int64_t num_queries = 20;
    std::int64_t num_classes = 3;
    std::int64_t mask_heads = 4, mask_points = 4;
    std::int64_t mask_channels = 8;
    std::int64_t mask_encoder_layers = 1;
    std::string pe_mode = "rel";
    // loss
    std::int64_t mask_stages = 2;
    bool match_include_mask = false;
    double w_cls = 2.0, w_l1 = 5.0, w_iou = 2.0, w_dice = 8.0, w_bce = 2.0;
    double focal_alpha = 0.25, focal_gamma = 2.0;
    // optimizer
    double lr = 1e-3;
    double beta1 = 0.9, beta2 = 0.999, adam_eps = 1e-8;
    double clip_norm = 1.0;
    // run
    std::int64_t steps = 300;
    std::int64_t seed = 7;
    std::int64_t checkpoint_every = 100;
    // prediction filtering
    double score_threshold = 0.5;
    std::int64_t top_k = 20;
};

// Parses config text; later assignments win. Unknown keys, malformed lines,
// and unparseable values all throw.
RunConfig parse_run_config(const std::string& text);
RunConfig load_run_config(const std::string& path);

// Sets one key on an already-parsed config (CLI override path).
void apply_override(RunConfig& cfg, const std::string& key, const std::string& value);

// Canonical echo: every key in a fixed order with its doc line and default.
std::string resolved_config_text(const RunConfig& cfg);

// Cross-field sanity used by model assembly; throws on violation.
void validate_run_config(const RunConfig& cfg);

// Adapters into the module-level configs.
LossConfig make_loss_config(const RunConfig& cfg);
EncodingConfig make_pe_config(const RunConfig& cfg);

}  // namespace iseg
