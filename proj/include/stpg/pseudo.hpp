#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "stpg/model.hpp"
#include "stpg/types.hpp"

namespace stpg {

// Professional-training pixel selection: confusion matrix between
// Pro-Student and Gen-Teacher predictions, class-level mismatch scores,
// partition of the Gen-Teacher pseudo-labels into consistent / highly
// mismatched / low mismatched sets, and the confidence-weighted losses.

// Row index p = Pro-Student's predicted class, column q = Gen-Teacher's.
struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<int64_t> m;

    ConfusionMatrix() = default;
    explicit ConfusionMatrix(int c) : num_classes(c), m(static_cast<size_t>(c) * c, 0) {}

    int64_t& at(int p, int q) { return m[static_cast<size_t>(p) * num_classes + q]; }
    int64_t at(int p, int q) const { return m[static_cast<size_t>(p) * num_classes + q]; }

    int64_t row_sum(int p) const;
    int64_t col_sum(int q) const;
    int64_t total() const;

    // Counts every pixel of the pair; maps must have equal shape.
    void add(const LabelMap& pro_pred, const LabelMap& gen_pred);
};

ConfusionMatrix build_confusion(const LabelMap& pro_pred, const LabelMap& gen_pred,
                                int num_classes);

// I_q = (row miss fraction) + (column miss fraction); a term with zero
// denominator contributes 0. Entries lie in [0,2].
std::vector<double> mismatch_scores(const ConfusionMatrix& m);
// Real-valued variant for the EMA-accumulated confusion matrix.
std::vector<double> mismatch_scores(const std::vector<double>& m, int num_classes);

struct PseudoLabelPartition {
    OneHotMap cons, hmis, lmis;

    int64_t cons_count() const { return cons.count_active(); }
    int64_t hmis_count() const { return hmis.count_active(); }
    int64_t lmis_count() const { return lmis.count_active(); }
};

// Per pixel with p = argmax(pro_prob), q = argmax(gen_prob): p == q -> cons;
// p != q and I_p < I_q -> hmis; otherwise lmis. All three carry the
// Gen-Teacher label q, so cons + hmis + lmis equals one_hot(gen_prob).
PseudoLabelPartition partition_pseudo_labels(const ProbabilityMap& pro_prob,
                                             const ProbabilityMap& gen_prob,
                                             const std::vector<double>& scores);

// Max teacher probability where the selection mask is active, 0 elsewhere.
WeightMap confidence_weights(const ProbabilityMap& teacher_prob, const OneHotMap& selection);

enum class CeNormalization {
    kAllPixels,       // mean over every pixel; unselected pixels contribute 0
    kSelectedPixels,  // mean over selected pixels only
};

// Confidence-weighted cross entropy with fused softmax gradient; empty
// selection gives loss 0 and zero gradient.
struct WeightedCeResult {
    double loss = 0.0;
    DMap dlogits;
};
WeightedCeResult weighted_ce_loss(const ProbabilityMap& student_prob, const OneHotMap& target,
                                  const WeightMap& weights,
                                  CeNormalization norm = CeNormalization::kAllPixels);

// Which partition members feed the professional loss. kConsHmis is the
// published strategy; the others exist for the ablation grid.
enum class SelectionMode { kConsOnly, kConsHmis, kConsLmis, kAll };

struct UnsupTargets {
    std::vector<OneHotMap> targets;
    std::vector<WeightMap> weights;
    ConfusionMatrix confusion;          // batch-level (professional only)
    std::vector<double> scores;         // mismatch scores (professional only)
    int64_t cons_pixels = 0, hmis_pixels = 0, lmis_pixels = 0;
};

// Professional module targets: one confusion matrix over the whole batch,
// partition per image, targets restricted by `mode`, weights from the
// Gen-Teacher confidences. The optional `ema_confusion` (flattened CxC,
// updated in place) selects the EMA-accumulated variant.
UnsupTargets professional_step_targets(std::span<const ProbabilityMap> pro_student_probs,
                                       std::span<const ProbabilityMap> gen_teacher_probs,
                                       SelectionMode mode = SelectionMode::kConsHmis,
                                       std::vector<double>* ema_confusion = nullptr,
                                       double ema_decay = 0.9);

// General module targets: all Pro-Teacher pseudo-labels, confidence weights
// everywhere.
UnsupTargets general_step_targets(std::span<const ProbabilityMap> pro_teacher_probs);

}  // namespace stpg
