#pragma once

#include <stdexcept>
#include <string>
#include <vector>

#include "json.hpp"

#include "stpg/dataset.hpp"
#include "stpg/pseudo.hpp"

namespace stpg {

struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Full training-run configuration. The JSON document mirrors this struct
// field-for-field (dataset spec under "data"); every default is overridable.
struct RunConfig {
    DatasetSpec data;

    // loss weights
    double lambda_s = 1.0;
    double lambda_u = 1.0;
    double lambda_ctr = 0.1;
    // per-path multipliers for the two unsupervised losses; default to
    // lambda_u unless set explicitly (used by ablations and isolation tests)
    double lambda_u_pro = 1.0;
    double lambda_u_gen = 1.0;

    // contrastive learning
    double tau = 0.5;
    double phi = 0.95;
    int bank_capacity = 256;
    int top_k = 32;
    double proto_alpha = 0.99;
    int64_t warmup_steps = 500;
    int64_t rematch_interval = 50;
    int contrastive_cap = 64;  // sampled features per class per student per step
    bool contrastive_gen_only = false;

    // optimization
    double base_lr = 0.01;
    double momentum = 0.9;
    double poly_power = 0.9;
    bool poly_literal = false;
    double ema_decay = 0.99;
    int batch_size = 4;
    int64_t max_iter = 3000;
    uint64_t seed = 1;

    // model
    int hidden_dim = 16;
    int feat_dim = 16;
    double dropout_p = 0.0;

    // augmentation
    double flip_prob = 0.5;
    int crop_pad = 4;
    int cutmix_rects = 3;
    double jitter_std = 0.05;

    // selection strategy and ablation switches
    SelectionMode selection = SelectionMode::kConsHmis;
    CeNormalization ce_norm = CeNormalization::kAllPixels;
    bool confusion_ema = false;
    double confusion_ema_decay = 0.9;
    bool disable_dcl = false;
    bool single_teacher = false;

    // evaluation / output
    int64_t eval_interval = 250;
    double tail_freq_threshold = 0.05;
    std::string out_dir = "stpg_run";

    // Classes whose spec frequency falls below tail_freq_threshold.
    std::vector<int> tail_classes() const;

    // Throws ConfigError enumerating every violated constraint.
    void validate() const;
};

RunConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const RunConfig& cfg);
RunConfig load_config_file(const std::string& path);

std::string selection_mode_name(SelectionMode mode);
SelectionMode selection_mode_from_name(const std::string& name);

}  // namespace stpg
