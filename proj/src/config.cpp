#include "stpg/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace stpg {

std::vector<int> RunConfig::tail_classes() const {
    std::vector<int> tails;
    for (size_t c = 0; c < data.class_freq.size(); ++c)
        if (data.class_freq[c] < tail_freq_threshold) tails.push_back(static_cast<int>(c));
    return tails;
}

void RunConfig::validate() const {
    std::vector<std::string> errors;
    try {
        data.validate();
    } catch (const std::invalid_argument& e) {
        errors.push_back(e.what());
    }
    auto check = [&](bool ok, const std::string& msg) {
        if (!ok) errors.push_back(msg);
    };
    check(lambda_s >= 0.0 && lambda_u >= 0.0 && lambda_ctr >= 0.0, "loss weights must be >= 0");
    check(lambda_u_pro >= 0.0 && lambda_u_gen >= 0.0, "per-path loss weights must be >= 0");
    check(tau > 0.0, "tau must be positive");
    check(phi > 0.0 && phi < 1.0, "phi must lie in (0,1)");
    check(bank_capacity >= 1, "bank_capacity must be >= 1");
    check(top_k >= 1, "top_k must be >= 1");
    check(proto_alpha >= 0.0 && proto_alpha <= 1.0, "proto_alpha must lie in [0,1]");
    check(warmup_steps >= 0, "warmup_steps must be >= 0");
    check(rematch_interval >= 1, "rematch_interval must be >= 1");
    check(contrastive_cap >= 1, "contrastive_cap must be >= 1");
    check(base_lr > 0.0, "base_lr must be positive");
    check(momentum >= 0.0 && momentum < 1.0, "momentum must lie in [0,1)");
    check(poly_power > 0.0, "poly_power must be positive");
    check(ema_decay >= 0.0 && ema_decay <= 1.0, "ema_decay must lie in [0,1]");
    check(batch_size >= 1, "batch_size must be >= 1");
    check(max_iter >= 0, "max_iter must be >= 0");
    check(hidden_dim >= 1, "hidden_dim must be >= 1");
    check(feat_dim >= 2, "feat_dim must be >= 2");
    check(dropout_p >= 0.0 && dropout_p < 1.0, "dropout_p must lie in [0,1)");
    check(flip_prob >= 0.0 && flip_prob <= 1.0, "flip_prob must lie in [0,1]");
    check(crop_pad >= 0, "crop_pad must be >= 0");
    check(cutmix_rects >= 0, "cutmix_rects must be >= 0");
    check(jitter_std >= 0.0, "jitter_std must be >= 0");
    check(eval_interval >= 1, "eval_interval must be >= 1");
    check(tail_freq_threshold > 0.0, "tail_freq_threshold must be positive");
    check(!out_dir.empty(), "out_dir must not be empty");
    if (!errors.empty()) {
        std::string joined;
        for (const auto& e : errors) joined += (joined.empty() ? "" : "; ") + e;
        throw ConfigError("invalid config: " + joined);
    }
}

std::string selection_mode_name(SelectionMode mode) {
    switch (mode) {
        case SelectionMode::kConsOnly: return "cons";
        case SelectionMode::kConsHmis: return "cons+hmis";
        case SelectionMode::kConsLmis: return "cons+lmis";
        case SelectionMode::kAll: return "all";
    }
    return "cons+hmis";
}

SelectionMode selection_mode_from_name(const std::string& name) {
    if (name == "cons") return SelectionMode::kConsOnly;
    if (name == "cons+hmis") return SelectionMode::kConsHmis;
    if (name == "cons+lmis") return SelectionMode::kConsLmis;
    if (name == "all") return SelectionMode::kAll;
    throw ConfigError("unknown selection mode '" + name +
                      "' (expected cons, cons+hmis, cons+lmis, or all)");
}

namespace {

const std::set<std::string> kDataKeys = {"num_classes", "width",     "height", "channels",
                                         "class_freq",  "snr",       "n_labeled",
                                         "n_unlabeled", "n_val",     "seed"};

const std::set<std::string> kTopKeys = {
    "data",           "lambda_s",         "lambda_u",        "lambda_ctr",
    "lambda_u_pro",   "lambda_u_gen",     "tau",             "phi",
    "bank_capacity",  "top_k",            "proto_alpha",     "warmup_steps",
    "rematch_interval", "contrastive_cap", "contrastive_gen_only",
    "base_lr",        "momentum",         "poly_power",      "poly_literal",
    "ema_decay",      "batch_size",       "max_iter",        "seed",
    "hidden_dim",     "feat_dim",         "dropout_p",       "flip_prob",
    "crop_pad",       "cutmix_rects",     "jitter_std",      "selection",
    "ce_norm",        "confusion_ema",    "confusion_ema_decay",
    "disable_dcl",    "single_teacher",   "eval_interval",
    "tail_freq_threshold", "out_dir"};

template <typename T>
void read(const nlohmann::json& j, const char* key, T& out) {
    if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig config_from_json(const nlohmann::json& j) {
    if (!j.is_object()) throw ConfigError("config root must be a JSON object");
    std::vector<std::string> unknown;
    for (auto it = j.begin(); it != j.end(); ++it)
        if (!kTopKeys.count(it.key())) unknown.push_back(it.key());
    if (j.contains("data")) {
        if (!j.at("data").is_object()) throw ConfigError("config: 'data' must be an object");
        for (auto it = j.at("data").begin(); it != j.at("data").end(); ++it)
            if (!kDataKeys.count(it.key())) unknown.push_back("data." + it.key());
    }
    if (!unknown.empty()) {
        std::string joined;
        for (const auto& k : unknown) joined += (joined.empty() ? "" : ", ") + k;
        throw ConfigError("unknown config keys: " + joined);
    }

    RunConfig cfg;
    try {
        if (j.contains("data")) {
            const auto& d = j.at("data");
            read(d, "num_classes", cfg.data.num_classes);
            read(d, "width", cfg.data.width);
            read(d, "height", cfg.data.height);
            read(d, "channels", cfg.data.channels);
            read(d, "class_freq", cfg.data.class_freq);
            read(d, "snr", cfg.data.snr);
            read(d, "n_labeled", cfg.data.n_labeled);
            read(d, "n_unlabeled", cfg.data.n_unlabeled);
            read(d, "n_val", cfg.data.n_val);
            read(d, "seed", cfg.data.seed);
        }
        read(j, "lambda_s", cfg.lambda_s);
        read(j, "lambda_u", cfg.lambda_u);
        read(j, "lambda_ctr", cfg.lambda_ctr);
        cfg.lambda_u_pro = cfg.lambda_u;
        cfg.lambda_u_gen = cfg.lambda_u;
        read(j, "lambda_u_pro", cfg.lambda_u_pro);
        read(j, "lambda_u_gen", cfg.lambda_u_gen);
        read(j, "tau", cfg.tau);
        read(j, "phi", cfg.phi);
        read(j, "bank_capacity", cfg.bank_capacity);
        read(j, "top_k", cfg.top_k);
        read(j, "proto_alpha", cfg.proto_alpha);
        read(j, "warmup_steps", cfg.warmup_steps);
        read(j, "rematch_interval", cfg.rematch_interval);
        read(j, "contrastive_cap", cfg.contrastive_cap);
        read(j, "contrastive_gen_only", cfg.contrastive_gen_only);
        read(j, "base_lr", cfg.base_lr);
        read(j, "momentum", cfg.momentum);
        read(j, "poly_power", cfg.poly_power);
        read(j, "poly_literal", cfg.poly_literal);
        read(j, "ema_decay", cfg.ema_decay);
        read(j, "batch_size", cfg.batch_size);
        read(j, "max_iter", cfg.max_iter);
        read(j, "seed", cfg.seed);
        read(j, "hidden_dim", cfg.hidden_dim);
        read(j, "feat_dim", cfg.feat_dim);
        read(j, "dropout_p", cfg.dropout_p);
        read(j, "flip_prob", cfg.flip_prob);
        read(j, "crop_pad", cfg.crop_pad);
        read(j, "cutmix_rects", cfg.cutmix_rects);
        read(j, "jitter_std", cfg.jitter_std);
        if (j.contains("selection"))
            cfg.selection = selection_mode_from_name(j.at("selection").get<std::string>());
        if (j.contains("ce_norm")) {
            std::string n = j.at("ce_norm").get<std::string>();
            if (n == "all_pixels") cfg.ce_norm = CeNormalization::kAllPixels;
            else if (n == "selected_pixels") cfg.ce_norm = CeNormalization::kSelectedPixels;
            else throw ConfigError("ce_norm must be 'all_pixels' or 'selected_pixels'");
        }
        read(j, "confusion_ema", cfg.confusion_ema);
        read(j, "confusion_ema_decay", cfg.confusion_ema_decay);
        read(j, "disable_dcl", cfg.disable_dcl);
        read(j, "single_teacher", cfg.single_teacher);
        read(j, "eval_interval", cfg.eval_interval);
        read(j, "tail_freq_threshold", cfg.tail_freq_threshold);
        read(j, "out_dir", cfg.out_dir);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(std::string("config parse error: ") + e.what());
    }
    cfg.validate();
    return cfg;
}

nlohmann::json config_to_json(const RunConfig& cfg) {
    nlohmann::json j;
    j["data"] = {{"num_classes", cfg.data.num_classes}, {"width", cfg.data.width},
                 {"height", cfg.data.height},           {"channels", cfg.data.channels},
                 {"class_freq", cfg.data.class_freq},   {"snr", cfg.data.snr},
                 {"n_labeled", cfg.data.n_labeled},     {"n_unlabeled", cfg.data.n_unlabeled},
                 {"n_val", cfg.data.n_val},             {"seed", cfg.data.seed}};
    j["lambda_s"] = cfg.lambda_s;
    j["lambda_u"] = cfg.lambda_u;
    j["lambda_ctr"] = cfg.lambda_ctr;
    j["lambda_u_pro"] = cfg.lambda_u_pro;
    j["lambda_u_gen"] = cfg.lambda_u_gen;
    j["tau"] = cfg.tau;
    j["phi"] = cfg.phi;
    j["bank_capacity"] = cfg.bank_capacity;
    j["top_k"] = cfg.top_k;
    j["proto_alpha"] = cfg.proto_alpha;
    j["warmup_steps"] = cfg.warmup_steps;
    j["rematch_interval"] = cfg.rematch_interval;
    j["contrastive_cap"] = cfg.contrastive_cap;
    j["contrastive_gen_only"] = cfg.contrastive_gen_only;
    j["base_lr"] = cfg.base_lr;
    j["momentum"] = cfg.momentum;
    j["poly_power"] = cfg.poly_power;
    j["poly_literal"] = cfg.poly_literal;
    j["ema_decay"] = cfg.ema_decay;
    j["batch_size"] = cfg.batch_size;
    j["max_iter"] = cfg.max_iter;
    j["seed"] = cfg.seed;
    j["hidden_dim"] = cfg.hidden_dim;
    j["feat_dim"] = cfg.feat_dim;
    j["dropout_p"] = cfg.dropout_p;
    j["flip_prob"] = cfg.flip_prob;
    j["crop_pad"] = cfg.crop_pad;
    j["cutmix_rects"] = cfg.cutmix_rects;
    j["jitter_std"] = cfg.jitter_std;
    j["selection"] = selection_mode_name(cfg.selection);
    j["ce_norm"] = cfg.ce_norm == CeNormalization::kAllPixels ? "all_pixels" : "selected_pixels";
    j["confusion_ema"] = cfg.confusion_ema;
    j["confusion_ema_decay"] = cfg.confusion_ema_decay;
    j["disable_dcl"] = cfg.disable_dcl;
    j["single_teacher"] = cfg.single_teacher;
    j["eval_interval"] = cfg.eval_interval;
    j["tail_freq_threshold"] = cfg.tail_freq_threshold;
    j["out_dir"] = cfg.out_dir;
    return j;
}

RunConfig load_config_file(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    nlohmann::json j = nlohmann::json::parse(f, nullptr, false);
    if (j.is_discarded()) throw ConfigError("config file is not valid JSON: " + path);
    return config_from_json(j);
}

}  // namespace stpg
