#include "stpg/trainer.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "json.hpp"

#include "stpg/io.hpp"

namespace fs = std::filesystem;

namespace stpg {
namespace {

enum : uint64_t {
    kTagInitGen = 101,
    kTagInitPro = 102,
    kTagAnchors = 103,
    kTagSampler = 104,
    kTagAugLabeled = 105,
    kTagAugUnlabeled = 106,
    kTagContrastive = 107,
    kTagDropout = 108,
};

// Location of a sampled contrastive feature inside the step's caches.
struct FeatureRef {
    int student;  // 0 = gen, 1 = pro
    int kind;     // 0 = labeled cache, 1 = strong unlabeled cache
    int image;
    int x, y;
    int cls;
};

// Control-flow marker for the skip path: a diverged model produced
// non-finite logits somewhere inside the step.
struct NonFiniteForward {};

ProbabilityMap checked_softmax(const Tensor& logits) {
    if (!logits.all_finite()) throw NonFiniteForward{};
    return softmax_channelwise(logits);
}

std::vector<float> feature_at(const Tensor& features, int x, int y) {
    const int d = features.dim(2);
    std::vector<float> f(static_cast<size_t>(d));
    for (int k = 0; k < d; ++k) f[static_cast<size_t>(k)] = features.at(x, y, k);
    return f;
}

}  // namespace

Trainer::Trainer(const RunConfig& cfg)
    : cfg_(cfg), data_(generate_dataset((cfg.validate(), cfg.data))),
      sampler_(cfg.data.n_labeled, cfg.data.n_unlabeled, Rng(cfg.seed).derive(kTagSampler)) {
    Rng master(cfg_.seed);
    Rng gen_rng = master.derive(kTagInitGen);
    Rng pro_rng = master.derive(kTagInitPro);
    ModelDims dims{cfg_.data.channels, cfg_.hidden_dim, cfg_.data.num_classes, cfg_.feat_dim};
    state_.models = init_quartet(dims, gen_rng, pro_rng);

    Rng anchor_rng = master.derive(kTagAnchors);
    state_.anchors = fit_anchors(cfg_.data.num_classes, cfg_.feat_dim, cfg_.tau, anchor_rng);
    state_.prototypes = PrototypeBank(cfg_.data.num_classes, cfg_.feat_dim, cfg_.proto_alpha);
    state_.bank = MemoryBank(cfg_.data.num_classes, cfg_.feat_dim, cfg_.bank_capacity, cfg_.phi);

    state_.aug_labeled = master.derive(kTagAugLabeled);
    state_.aug_unlabeled = master.derive(kTagAugUnlabeled);
    state_.contrastive = master.derive(kTagContrastive);
    state_.dropout = master.derive(kTagDropout);

    tail_classes_ = cfg_.tail_classes();
}

struct Trainer::UnlabeledPass {
    std::vector<Image> weak;
    std::vector<ProbabilityMap> gen_teacher_mixed, pro_teacher_mixed;
    std::vector<ForwardResult> gen_student, pro_student;
    std::vector<ProbabilityMap> gen_student_prob, pro_student_prob;
};

StepRecord Trainer::step() {
    const int64_t k = state_.iter;
    const int B = cfg_.batch_size;
    const double inv_b = 1.0 / static_cast<double>(B);

    StepRecord rec;
    rec.step = k;
    LrSchedule sched{cfg_.base_lr, cfg_.poly_power, cfg_.max_iter, cfg_.poly_literal};
    rec.lr = poly_lr(k, sched);

    const bool unsup_active = cfg_.lambda_u_pro != 0.0 || cfg_.lambda_u_gen != 0.0;
    const bool dcl_enabled = !cfg_.disable_dcl && cfg_.lambda_ctr != 0.0;

    Batch batch = sampler_.next(B);

    ForwardOptions student_opts;
    student_opts.dropout_p = cfg_.dropout_p;
    if (cfg_.dropout_p > 0.0) student_opts.rng = &state_.dropout;

    const WeakParams weak_params{cfg_.flip_prob, cfg_.crop_pad};
    StrongParams strong_params;
    strong_params.weak = weak_params;
    strong_params.rect_count = cfg_.cutmix_rects;
    strong_params.jitter_std = cfg_.jitter_std;

    const bool contrastive_active = dcl_enabled && k >= cfg_.warmup_steps &&
                                    state_.prototypes.all_initialized() &&
                                    state_.assignment.has_value();

    std::vector<LabelMap> labeled_targets;
    std::vector<ForwardResult> gen_labeled, pro_labeled, teacher_labeled;
    std::vector<CeResult> ce_gen, ce_pro;
    UnlabeledPass up;
    UnsupTargets pro_targets, gen_targets;
    std::vector<WeightedCeResult> wce_pro, wce_gen;
    std::vector<FeatureRef> refs;
    BatchContrastive ctr;

    try {
    // ---- labeled pass: weak views into both students (Eq. 1) ----
    double loss_s = 0.0;
    for (int i = 0; i < B; ++i) {
        const LabeledItem& item = data_.labeled[static_cast<size_t>(batch.labeled_idx[static_cast<size_t>(i)])];
        auto [weak_img, aug] = weak_augment(item.image, weak_params, state_.aug_labeled);
        labeled_targets.push_back(apply_weak(item.label, aug));

        gen_labeled.push_back(forward(state_.models.gen_student, weak_img, student_opts));
        pro_labeled.push_back(forward(state_.models.pro_student, weak_img, student_opts));
        if (dcl_enabled) teacher_labeled.push_back(forward(state_.models.gen_teacher, weak_img));

        ce_gen.push_back(softmax_ce_loss(checked_softmax(gen_labeled.back().logits),
                                         labeled_targets.back()));
        ce_pro.push_back(softmax_ce_loss(checked_softmax(pro_labeled.back().logits),
                                         labeled_targets.back()));
        loss_s += (ce_gen.back().loss + ce_pro.back().loss) * inv_b;
    }
    rec.loss_s = loss_s;

    // ---- unlabeled pass: teachers on weak views, students on strong ----
    if (unsup_active) {
        std::vector<ProbabilityMap> gen_teacher_prob, pro_teacher_prob;
        for (int i = 0; i < B; ++i) {
            const Image& img =
                data_.unlabeled[static_cast<size_t>(batch.unlabeled_idx[static_cast<size_t>(i)])].image;
            auto [weak_img, aug] = weak_augment(img, weak_params, state_.aug_unlabeled);
            up.weak.push_back(std::move(weak_img));
        }
        const ModelParams& general_teacher =
            cfg_.single_teacher ? state_.models.gen_teacher : state_.models.pro_teacher;
        for (int i = 0; i < B; ++i) {
            gen_teacher_prob.push_back(checked_softmax(
                forward(state_.models.gen_teacher, up.weak[static_cast<size_t>(i)]).logits));
            pro_teacher_prob.push_back(checked_softmax(
                forward(general_teacher, up.weak[static_cast<size_t>(i)]).logits));
        }
        for (int i = 0; i < B; ++i) {
            int j = B > 1 ? (i + 1 + state_.aug_unlabeled.uniform_int(B - 1)) % B : 0;
            std::vector<Rect> rects =
                sample_cutmix_rects(cfg_.data.width, cfg_.data.height, strong_params,
                                    state_.aug_unlabeled);
            for (Rect& r : rects) r.source_index = j;
            Image strong = paste_rects(up.weak[static_cast<size_t>(i)], up.weak[static_cast<size_t>(j)], rects);
            strong = feature_jitter(strong, cfg_.jitter_std, state_.aug_unlabeled);

            up.gen_teacher_mixed.push_back(paste_rects(gen_teacher_prob[static_cast<size_t>(i)],
                                                       gen_teacher_prob[static_cast<size_t>(j)], rects));
            up.pro_teacher_mixed.push_back(paste_rects(pro_teacher_prob[static_cast<size_t>(i)],
                                                       pro_teacher_prob[static_cast<size_t>(j)], rects));

            up.gen_student.push_back(forward(state_.models.gen_student, strong, student_opts));
            up.pro_student.push_back(forward(state_.models.pro_student, strong, student_opts));
            up.gen_student_prob.push_back(checked_softmax(up.gen_student.back().logits));
            up.pro_student_prob.push_back(checked_softmax(up.pro_student.back().logits));
        }

        pro_targets = professional_step_targets(
            up.pro_student_prob, up.gen_teacher_mixed, cfg_.selection,
            cfg_.confusion_ema ? &state_.ema_confusion : nullptr, cfg_.confusion_ema_decay);
        gen_targets = general_step_targets(up.pro_teacher_mixed);

        for (int i = 0; i < B; ++i) {
            wce_pro.push_back(weighted_ce_loss(up.pro_student_prob[static_cast<size_t>(i)],
                                               pro_targets.targets[static_cast<size_t>(i)],
                                               pro_targets.weights[static_cast<size_t>(i)], cfg_.ce_norm));
            wce_gen.push_back(weighted_ce_loss(up.gen_student_prob[static_cast<size_t>(i)],
                                               gen_targets.targets[static_cast<size_t>(i)],
                                               gen_targets.weights[static_cast<size_t>(i)], cfg_.ce_norm));
            rec.loss_u_pro += wce_pro.back().loss * inv_b;
            rec.loss_u_gen += wce_gen.back().loss * inv_b;
        }
        rec.cons_pixels = pro_targets.cons_pixels;
        rec.hmis_pixels = pro_targets.hmis_pixels;
        rec.lmis_pixels = pro_targets.lmis_pixels;
        rec.mismatch = pro_targets.scores;
    }

    // ---- contrastive losses (after warm-up, once prototypes are matched) ----
    if (contrastive_active) {
        const int num_students = cfg_.contrastive_gen_only ? 1 : 2;
        std::vector<std::vector<FeatureRef>> per_class(
            static_cast<size_t>(cfg_.data.num_classes));
        for (int s = 0; s < num_students; ++s) {
            for (int i = 0; i < B; ++i) {
                const LabelMap& lbl = labeled_targets[static_cast<size_t>(i)];
                for (int x = 0; x < lbl.width; ++x)
                    for (int y = 0; y < lbl.height; ++y) {
                        uint8_t c = lbl.at(x, y);
                        if (c == kIgnoreLabel) continue;
                        per_class[c].push_back({s, 0, i, x, y, c});
                    }
            }
            if (unsup_active) {
                for (int i = 0; i < B; ++i) {
                    const ProbabilityMap& tprob = s == 0 ? up.pro_teacher_mixed[static_cast<size_t>(i)]
                                                         : up.gen_teacher_mixed[static_cast<size_t>(i)];
                    for (int x = 0; x < tprob.width(); ++x)
                        for (int y = 0; y < tprob.height(); ++y) {
                            int best = 0;
                            float bv = tprob.data.at(x, y, 0);
                            for (int c = 1; c < tprob.classes(); ++c)
                                if (tprob.data.at(x, y, c) > bv) { bv = tprob.data.at(x, y, c); best = c; }
                            if (static_cast<double>(bv) > cfg_.phi)
                                per_class[static_cast<size_t>(best)].push_back({s, 1, i, x, y, best});
                        }
                }
            }
        }
        for (auto& bucket : per_class) {
            if (static_cast<int>(bucket.size()) > cfg_.contrastive_cap) {
                state_.contrastive.shuffle(bucket);
                bucket.resize(static_cast<size_t>(cfg_.contrastive_cap));
            }
            refs.insert(refs.end(), bucket.begin(), bucket.end());
        }

        std::vector<std::vector<float>> feats;
        std::vector<int> classes;
        for (const FeatureRef& r : refs) {
            const ForwardResult& fr =
                r.student == 0
                    ? (r.kind == 0 ? gen_labeled[static_cast<size_t>(r.image)] : up.gen_student[static_cast<size_t>(r.image)])
                    : (r.kind == 0 ? pro_labeled[static_cast<size_t>(r.image)] : up.pro_student[static_cast<size_t>(r.image)]);
            feats.push_back(feature_at(fr.features, r.x, r.y));
            classes.push_back(r.cls);
        }
        ctr = contrastive_batch_loss(feats, classes, state_.anchors, *state_.assignment,
                                     state_.bank);
        rec.loss_ac = ctr.loss_ac;
        rec.loss_sim = ctr.loss_sim;
    }

    rec.loss_total = cfg_.lambda_s * rec.loss_s + cfg_.lambda_u_pro * rec.loss_u_pro +
                     cfg_.lambda_u_gen * rec.loss_u_gen +
                     cfg_.lambda_ctr * (rec.loss_ac + rec.loss_sim);
    } catch (const NonFiniteForward&) {
        rec.loss_total = std::numeric_limits<double>::quiet_NaN();
    }
    rec.bank_counts.resize(static_cast<size_t>(cfg_.data.num_classes));
    for (int c = 0; c < cfg_.data.num_classes; ++c)
        rec.bank_counts[static_cast<size_t>(c)] = static_cast<int64_t>(state_.bank.queue(c).size());

    if (!std::isfinite(rec.loss_total)) {
        rec.skipped = true;
        if (++state_.consecutive_skips >= 10)
            throw NumericAbort("10 consecutive non-finite training steps at iteration " +
                               std::to_string(k));
        ++state_.iter;
        return rec;
    }
    state_.consecutive_skips = 0;

    // ---- backward: combine scaled per-cache gradient maps ----
    Grads gen_grads, pro_grads;
    gen_grads.init_like(state_.models.gen_student);
    pro_grads.init_like(state_.models.pro_student);

    const int w = cfg_.data.width, h = cfg_.data.height, D = cfg_.feat_dim;
    std::vector<DMap> dfeat_gen_labeled, dfeat_pro_labeled, dfeat_gen_strong, dfeat_pro_strong;
    if (contrastive_active && cfg_.lambda_ctr != 0.0) {
        dfeat_gen_labeled.assign(static_cast<size_t>(B), DMap());
        dfeat_pro_labeled.assign(static_cast<size_t>(B), DMap());
        dfeat_gen_strong.assign(static_cast<size_t>(B), DMap());
        dfeat_pro_strong.assign(static_cast<size_t>(B), DMap());
        for (size_t r = 0; r < refs.size(); ++r) {
            const FeatureRef& ref = refs[r];
            std::vector<DMap>& maps =
                ref.student == 0 ? (ref.kind == 0 ? dfeat_gen_labeled : dfeat_gen_strong)
                                 : (ref.kind == 0 ? dfeat_pro_labeled : dfeat_pro_strong);
            DMap& m = maps[static_cast<size_t>(ref.image)];
            if (m.empty()) m = DMap(w, h, D);
            for (int kk = 0; kk < D; ++kk)
                m.at(ref.x, ref.y, kk) += cfg_.lambda_ctr * ctr.dfeats[r][static_cast<size_t>(kk)];
        }
    }

    DMap empty;
    for (int i = 0; i < B; ++i) {
        DMap dl = std::move(ce_gen[static_cast<size_t>(i)].dlogits);
        for (double& x : dl.v) x *= cfg_.lambda_s * inv_b;
        backward(state_.models.gen_student, gen_labeled[static_cast<size_t>(i)].cache, dl,
                 dfeat_gen_labeled.empty() ? empty : dfeat_gen_labeled[static_cast<size_t>(i)], gen_grads);

        DMap dp = std::move(ce_pro[static_cast<size_t>(i)].dlogits);
        for (double& x : dp.v) x *= cfg_.lambda_s * inv_b;
        backward(state_.models.pro_student, pro_labeled[static_cast<size_t>(i)].cache, dp,
                 dfeat_pro_labeled.empty() ? empty : dfeat_pro_labeled[static_cast<size_t>(i)], pro_grads);
    }
    if (unsup_active) {
        for (int i = 0; i < B; ++i) {
            DMap dg = std::move(wce_gen[static_cast<size_t>(i)].dlogits);
            for (double& x : dg.v) x *= cfg_.lambda_u_gen * inv_b;
            backward(state_.models.gen_student, up.gen_student[static_cast<size_t>(i)].cache, dg,
                     dfeat_gen_strong.empty() ? empty : dfeat_gen_strong[static_cast<size_t>(i)], gen_grads);

            DMap dp = std::move(wce_pro[static_cast<size_t>(i)].dlogits);
            for (double& x : dp.v) x *= cfg_.lambda_u_pro * inv_b;
            backward(state_.models.pro_student, up.pro_student[static_cast<size_t>(i)].cache, dp,
                     dfeat_pro_strong.empty() ? empty : dfeat_pro_strong[static_cast<size_t>(i)], pro_grads);
        }
    }

    sgd_step(state_.models.gen_student, gen_grads, state_.models.gen_opt, rec.lr, cfg_.momentum);
    sgd_step(state_.models.pro_student, pro_grads, state_.models.pro_opt, rec.lr, cfg_.momentum);

    // ---- EMA teacher updates, after both student steps ----
    ema_update(state_.models.gen_teacher, state_.models.gen_student, cfg_.ema_decay);
    ema_update(state_.models.pro_teacher, state_.models.pro_student, cfg_.ema_decay);

    // ---- prototype / assignment / memory bank maintenance ----
    if (dcl_enabled) maintain_contrastive_state(teacher_labeled, labeled_targets);

    ++state_.iter;
    return rec;
}

void Trainer::maintain_contrastive_state(const std::vector<ForwardResult>& teacher_labeled,
                                         const std::vector<LabelMap>& labels) {
    const int C = cfg_.data.num_classes, D = cfg_.feat_dim;
    const int64_t k = state_.iter;

    // class means of unit-normalized Gen-Teacher features over labeled pixels
    std::vector<std::vector<double>> sums(static_cast<size_t>(C),
                                          std::vector<double>(static_cast<size_t>(D), 0.0));
    std::vector<int64_t> counts(static_cast<size_t>(C), 0);
    for (size_t i = 0; i < teacher_labeled.size(); ++i) {
        const Tensor& feats = teacher_labeled[i].features;
        if (!feats.all_finite()) continue;
        const LabelMap& lbl = labels[i];
        for (int x = 0; x < lbl.width; ++x)
            for (int y = 0; y < lbl.height; ++y) {
                uint8_t c = lbl.at(x, y);
                if (c == kIgnoreLabel) continue;
                std::vector<float> unit = l2_normalized(feature_at(feats, x, y));
                for (int d = 0; d < D; ++d) sums[c][static_cast<size_t>(d)] += unit[static_cast<size_t>(d)];
                ++counts[c];
            }
    }
    for (int c = 0; c < C; ++c) {
        if (counts[static_cast<size_t>(c)] == 0) continue;
        std::vector<double> mean(static_cast<size_t>(D));
        for (int d = 0; d < D; ++d)
            mean[static_cast<size_t>(d)] =
                sums[static_cast<size_t>(c)][static_cast<size_t>(d)] / static_cast<double>(counts[static_cast<size_t>(c)]);
        state_.prototypes.update(c, mean);
    }

    // matching activates after warm-up and refreshes as prototypes drift
    if (k >= cfg_.warmup_steps && state_.prototypes.all_initialized() &&
        (!state_.assignment.has_value() || k % cfg_.rematch_interval == 0)) {
        state_.assignment = match_prototypes(state_.anchors, state_.prototypes);
    }

    // proximity-guided insertion of labeled Gen-Teacher features
    if (state_.assignment.has_value()) {
        std::vector<std::vector<float>> feats;
        std::vector<float> confs;
        std::vector<int> labs;
        for (size_t i = 0; i < teacher_labeled.size(); ++i) {
            if (!teacher_labeled[i].logits.all_finite() || !teacher_labeled[i].features.all_finite())
                continue;
            ProbabilityMap prob = softmax_channelwise(teacher_labeled[i].logits);
            const LabelMap& lbl = labels[i];
            for (int x = 0; x < lbl.width; ++x)
                for (int y = 0; y < lbl.height; ++y) {
                    uint8_t c = lbl.at(x, y);
                    if (c == kIgnoreLabel) continue;
                    float conf = prob.data.at(x, y, 0);
                    for (int q = 1; q < C; ++q) conf = std::max(conf, prob.data.at(x, y, q));
                    feats.push_back(feature_at(teacher_labeled[i].features, x, y));
                    confs.push_back(conf);
                    labs.push_back(c);
                }
        }
        state_.bank.insert(feats, confs, labs, state_.anchors, *state_.assignment, cfg_.top_k);
    }
}

EvalReport Trainer::evaluate_now() const {
    return evaluate(state_.models.gen_student, data_.validation, tail_classes_, state_.iter);
}

RunResult Trainer::run(TelemetryWriter* telemetry) {
    fs::create_directories(cfg_.out_dir);
    RunResult result;
    bool have_best = false;

    auto run_eval = [&]() {
        EvalReport report = evaluate_now();
        write_report(cfg_.out_dir + "/report_step_" + std::to_string(report.step) + ".json", report);
        if (report.miou > state_.best_miou) {
            state_.best_miou = report.miou;
            result.best_report = report;
            have_best = true;
            save_checkpoint(cfg_.out_dir + "/checkpoint_best");
            write_report(cfg_.out_dir + "/report_best.json", report);
        }
        return report;
    };

    while (state_.iter < cfg_.max_iter) {
        StepRecord rec = step();
        if (telemetry != nullptr) telemetry->log(rec);
        ++result.steps_run;
        if (state_.iter % cfg_.eval_interval == 0 && state_.iter < cfg_.max_iter) run_eval();
    }

    result.final_report = run_eval();
    write_report(cfg_.out_dir + "/report.json", result.final_report);
    save_checkpoint(cfg_.out_dir + "/checkpoint_final");
    if (!have_best) result.best_report = result.final_report;
    return result;
}

namespace {

nlohmann::json rng_to_json(const Rng& rng) {
    return {{"seed", rng.seed()}, {"state", rng.state()}};
}

Rng rng_from_json(const nlohmann::json& j) {
    Rng r(j.at("seed").get<uint64_t>());
    r.set_state(j.at("state").get<uint64_t>());
    return r;
}

}  // namespace

void Trainer::save_checkpoint(const std::string& dir) const {
    fs::create_directories(dir);
    write_tensor(dir + "/gen_student.stpg", flatten_params(state_.models.gen_student));
    write_tensor(dir + "/pro_student.stpg", flatten_params(state_.models.pro_student));
    write_tensor(dir + "/gen_teacher.stpg", flatten_params(state_.models.gen_teacher));
    write_tensor(dir + "/pro_teacher.stpg", flatten_params(state_.models.pro_teacher));
    write_tensor(dir + "/opt_gen.stpg", flatten_sgd(state_.models.gen_opt));
    write_tensor(dir + "/opt_pro.stpg", flatten_sgd(state_.models.pro_opt));
    write_tensor(dir + "/anchors.stpg", state_.anchors.v);
    write_tensor(dir + "/prototypes.stpg", state_.prototypes.c);

    nlohmann::json m;
    m["iteration"] = state_.iter;
    m["consecutive_skips"] = state_.consecutive_skips;
    m["best_miou"] = state_.best_miou;
    m["dims"] = {{"in_channels", cfg_.data.channels},
                 {"hidden_dim", cfg_.hidden_dim},
                 {"num_classes", cfg_.data.num_classes},
                 {"feat_dim", cfg_.feat_dim}};
    m["anchors"] = {{"tau", state_.anchors.tau}, {"converged", state_.anchors.converged}};
    m["prototypes_initialized"] = state_.prototypes.initialized;
    m["ema_confusion"] = state_.ema_confusion;
    if (state_.assignment.has_value())
        m["assignment"] = *state_.assignment;
    else
        m["assignment"] = nullptr;

    BatchSampler::State ss = sampler_.state();
    m["sampler"] = {{"rng_state", ss.rng_state},
                    {"labeled_order", ss.labeled_order},
                    {"unlabeled_order", ss.unlabeled_order},
                    {"labeled_cursor", ss.labeled_cursor},
                    {"unlabeled_cursor", ss.unlabeled_cursor}};
    m["rng"] = {{"aug_labeled", rng_to_json(state_.aug_labeled)},
                {"aug_unlabeled", rng_to_json(state_.aug_unlabeled)},
                {"contrastive", rng_to_json(state_.contrastive)},
                {"dropout", rng_to_json(state_.dropout)},
                {"sampler_seed", sampler_.state().rng_state}};

    // memory bank: features as one [total,D] tensor, counts and confidences
    // in the manifest
    nlohmann::json bank;
    std::vector<int64_t> counts;
    std::vector<double> confs;
    int64_t total = 0;
    for (int c = 0; c < state_.bank.classes(); ++c) {
        const auto& q = state_.bank.queue(c);
        counts.push_back(static_cast<int64_t>(q.size()));
        for (const auto& e : q) confs.push_back(e.confidence);
        total += static_cast<int64_t>(q.size());
    }
    bank["counts"] = counts;
    bank["confidences"] = confs;
    m["bank"] = bank;
    if (total > 0) {
        Tensor bf({static_cast<int>(total), cfg_.feat_dim});
        int64_t row = 0;
        for (int c = 0; c < state_.bank.classes(); ++c)
            for (const auto& e : state_.bank.queue(c)) {
                for (int d = 0; d < cfg_.feat_dim; ++d)
                    bf.at(static_cast<int>(row), d) = e.f[static_cast<size_t>(d)];
                ++row;
            }
        write_tensor(dir + "/bank.stpg", bf);
    }

    std::ofstream f(dir + "/manifest.json");
    if (!f) throw IoError(IoStatus::io_failure, dir + "/manifest.json: cannot open for writing");
    f << m.dump(2) << "\n";
    if (!f) throw IoError(IoStatus::io_failure, dir + "/manifest.json: write failed");
}

void Trainer::load_checkpoint(const std::string& dir) {
    std::ifstream f(dir + "/manifest.json");
    if (!f) throw IoError(IoStatus::io_failure, dir + "/manifest.json: cannot open");
    nlohmann::json m = nlohmann::json::parse(f);

    ModelDims dims{m.at("dims").at("in_channels").get<int>(),
                   m.at("dims").at("hidden_dim").get<int>(),
                   m.at("dims").at("num_classes").get<int>(),
                   m.at("dims").at("feat_dim").get<int>()};
    ModelDims expected{cfg_.data.channels, cfg_.hidden_dim, cfg_.data.num_classes, cfg_.feat_dim};
    if (!(dims == expected))
        throw ConfigError("checkpoint model dimensions do not match the config");

    unflatten_params(state_.models.gen_student, read_tensor(dir + "/gen_student.stpg"));
    unflatten_params(state_.models.pro_student, read_tensor(dir + "/pro_student.stpg"));
    unflatten_params(state_.models.gen_teacher, read_tensor(dir + "/gen_teacher.stpg"));
    unflatten_params(state_.models.pro_teacher, read_tensor(dir + "/pro_teacher.stpg"));
    unflatten_sgd(state_.models.gen_opt, read_tensor(dir + "/opt_gen.stpg"));
    unflatten_sgd(state_.models.pro_opt, read_tensor(dir + "/opt_pro.stpg"));
    state_.anchors.v = read_tensor(dir + "/anchors.stpg", {cfg_.data.num_classes, cfg_.feat_dim});
    state_.anchors.tau = m.at("anchors").at("tau").get<double>();
    state_.anchors.converged = m.at("anchors").at("converged").get<bool>();
    state_.prototypes.c = read_tensor(dir + "/prototypes.stpg", {cfg_.data.num_classes, cfg_.feat_dim});
    state_.prototypes.initialized = m.at("prototypes_initialized").get<std::vector<uint8_t>>();
    state_.ema_confusion = m.at("ema_confusion").get<std::vector<double>>();
    if (m.at("assignment").is_null())
        state_.assignment.reset();
    else
        state_.assignment = m.at("assignment").get<Assignment>();

    state_.iter = m.at("iteration").get<int64_t>();
    state_.consecutive_skips = m.at("consecutive_skips").get<int>();
    state_.best_miou = m.at("best_miou").get<double>();

    BatchSampler::State ss;
    ss.rng_state = m.at("sampler").at("rng_state").get<uint64_t>();
    ss.labeled_order = m.at("sampler").at("labeled_order").get<std::vector<int>>();
    ss.unlabeled_order = m.at("sampler").at("unlabeled_order").get<std::vector<int>>();
    ss.labeled_cursor = m.at("sampler").at("labeled_cursor").get<int>();
    ss.unlabeled_cursor = m.at("sampler").at("unlabeled_cursor").get<int>();
    sampler_.restore(ss);

    state_.aug_labeled = rng_from_json(m.at("rng").at("aug_labeled"));
    state_.aug_unlabeled = rng_from_json(m.at("rng").at("aug_unlabeled"));
    state_.contrastive = rng_from_json(m.at("rng").at("contrastive"));
    state_.dropout = rng_from_json(m.at("rng").at("dropout"));

    std::vector<int64_t> counts = m.at("bank").at("counts").get<std::vector<int64_t>>();
    std::vector<double> confs = m.at("bank").at("confidences").get<std::vector<double>>();
    state_.bank = MemoryBank(cfg_.data.num_classes, cfg_.feat_dim, cfg_.bank_capacity, cfg_.phi);
    int64_t total = 0;
    for (int64_t c : counts) total += c;
    if (total > 0) {
        Tensor bf = read_tensor(dir + "/bank.stpg", {static_cast<int>(total), cfg_.feat_dim});
        int64_t row = 0;
        for (int c = 0; c < cfg_.data.num_classes; ++c) {
            auto& q = state_.bank.mutable_queue(c);
            for (int64_t i = 0; i < counts[static_cast<size_t>(c)]; ++i, ++row) {
                MemoryBank::Entry e;
                e.f.resize(static_cast<size_t>(cfg_.feat_dim));
                for (int d = 0; d < cfg_.feat_dim; ++d)
                    e.f[static_cast<size_t>(d)] = bf.at(static_cast<int>(row), d);
                e.confidence = static_cast<float>(confs[static_cast<size_t>(row)]);
                q.push_back(std::move(e));
            }
        }
    }
}

ModelParams load_checkpoint_gen_student(const std::string& dir) {
    std::ifstream f(dir + "/manifest.json");
    if (!f) throw IoError(IoStatus::io_failure, dir + "/manifest.json: cannot open");
    nlohmann::json m = nlohmann::json::parse(f);
    ModelDims dims{m.at("dims").at("in_channels").get<int>(),
                   m.at("dims").at("hidden_dim").get<int>(),
                   m.at("dims").at("num_classes").get<int>(),
                   m.at("dims").at("feat_dim").get<int>()};
    Rng dummy(0);
    ModelParams params = init_params(dims, dummy);
    unflatten_params(params, read_tensor(dir + "/gen_student.stpg"));
    return params;
}

}  // namespace stpg
