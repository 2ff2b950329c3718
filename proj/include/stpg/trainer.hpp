#pragma once

#include <optional>
#include <string>

#include "stpg/anchors.hpp"
#include "stpg/augment.hpp"
#include "stpg/config.hpp"
#include "stpg/dataset.hpp"
#include "stpg/metrics.hpp"
#include "stpg/model.hpp"
#include "stpg/pseudo.hpp"

namespace stpg {

// Raised after 10 consecutive non-finite-loss steps.
struct NumericAbort : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct TrainState {
    ModelQuartet models;
    AnchorSet anchors;
    PrototypeBank prototypes;
    std::optional<Assignment> assignment;
    MemoryBank bank;
    std::vector<double> ema_confusion;  // used only with confusion_ema

    int64_t iter = 0;  // completed steps
    int consecutive_skips = 0;
    double best_miou = -1.0;

    Rng aug_labeled{0}, aug_unlabeled{0}, contrastive{0}, dropout{0};
};

struct RunResult {
    EvalReport final_report;
    EvalReport best_report;
    int64_t steps_run = 0;
};

// The synergistic training loop. Owns the dataset (regenerated
// deterministically from the config), the model quartet, anchors,
// prototypes, memory bank and all rng streams. One thread owns all mutable
// state; per-image forward work is independent and could fan out, parameter
// updates stay serialized at the end of each step.
class Trainer {
public:
    explicit Trainer(const RunConfig& cfg);

    // One training iteration: supervised CE for both students, teacher
    // passes on weak unlabeled views, student passes on strong views, pixel
    // selection and the two unsupervised losses, contrastive losses after
    // warm-up, one SGD step per student, EMA teacher updates, then
    // prototype/bank/assignment maintenance.
    StepRecord step();

    // Full loop with periodic evaluation via Gen-Student, best/final
    // checkpoints and reports under cfg.out_dir.
    RunResult run(TelemetryWriter* telemetry);

    EvalReport evaluate_now() const;

    void save_checkpoint(const std::string& dir) const;
    void load_checkpoint(const std::string& dir);

    const RunConfig& config() const { return cfg_; }
    const Dataset& dataset() const { return data_; }
    TrainState& state() { return state_; }
    const TrainState& state() const { return state_; }
    const BatchSampler& sampler() const { return sampler_; }

private:
    struct UnlabeledPass;
    void maintain_contrastive_state(const std::vector<ForwardResult>& teacher_labeled,
                                    const std::vector<LabelMap>& labels);

    RunConfig cfg_;
    Dataset data_;
    BatchSampler sampler_;
    TrainState state_;
    std::vector<int> tail_classes_;
};

// Reads only the Gen-Student parameters out of a checkpoint (used by
// `stpg-lab eval`).
ModelParams load_checkpoint_gen_student(const std::string& dir);

}  // namespace stpg
