#include "stpg/pseudo.hpp"

#include <cmath>
#include <stdexcept>

namespace stpg {

int64_t ConfusionMatrix::row_sum(int p) const {
    int64_t s = 0;
    for (int q = 0; q < num_classes; ++q) s += at(p, q);
    return s;
}

int64_t ConfusionMatrix::col_sum(int q) const {
    int64_t s = 0;
    for (int p = 0; p < num_classes; ++p) s += at(p, q);
    return s;
}

int64_t ConfusionMatrix::total() const {
    int64_t s = 0;
    for (int64_t x : m) s += x;
    return s;
}

void ConfusionMatrix::add(const LabelMap& pro_pred, const LabelMap& gen_pred) {
    if (pro_pred.width != gen_pred.width || pro_pred.height != gen_pred.height)
        throw std::invalid_argument("ConfusionMatrix::add: shape mismatch");
    for (size_t i = 0; i < pro_pred.v.size(); ++i) ++at(pro_pred.v[i], gen_pred.v[i]);
}

ConfusionMatrix build_confusion(const LabelMap& pro_pred, const LabelMap& gen_pred,
                                int num_classes) {
    ConfusionMatrix m(num_classes);
    m.add(pro_pred, gen_pred);
    return m;
}

std::vector<double> mismatch_scores(const ConfusionMatrix& m) {
    std::vector<double> flat(m.m.begin(), m.m.end());
    return mismatch_scores(flat, m.num_classes);
}

std::vector<double> mismatch_scores(const std::vector<double>& m, int num_classes) {
    std::vector<double> scores(static_cast<size_t>(num_classes), 0.0);
    std::vector<double> row(static_cast<size_t>(num_classes), 0.0);
    std::vector<double> col(static_cast<size_t>(num_classes), 0.0);
    for (int p = 0; p < num_classes; ++p)
        for (int q = 0; q < num_classes; ++q) {
            double v = m[static_cast<size_t>(p) * num_classes + q];
            row[static_cast<size_t>(p)] += v;
            col[static_cast<size_t>(q)] += v;
        }
    for (int q = 0; q < num_classes; ++q) {
        double diag = m[static_cast<size_t>(q) * num_classes + q];
        double s = 0.0;
        if (row[static_cast<size_t>(q)] > 0.0) s += (row[static_cast<size_t>(q)] - diag) / row[static_cast<size_t>(q)];
        if (col[static_cast<size_t>(q)] > 0.0) s += (col[static_cast<size_t>(q)] - diag) / col[static_cast<size_t>(q)];
        scores[static_cast<size_t>(q)] = s;
    }
    return scores;
}

PseudoLabelPartition partition_pseudo_labels(const ProbabilityMap& pro_prob,
                                             const ProbabilityMap& gen_prob,
                                             const std::vector<double>& scores) {
    if (!pro_prob.data.same_shape(gen_prob.data))
        throw std::invalid_argument("partition_pseudo_labels: shape mismatch");
    const int w = gen_prob.width(), h = gen_prob.height(), c = gen_prob.classes();
    if (static_cast<int>(scores.size()) != c)
        throw std::invalid_argument("partition_pseudo_labels: score vector size mismatch");

    PseudoLabelPartition part{OneHotMap(w, h, c), OneHotMap(w, h, c), OneHotMap(w, h, c)};
    LabelMap pro = argmax_map(pro_prob);
    LabelMap gen = argmax_map(gen_prob);
    for (int x = 0; x < w; ++x)
        for (int y = 0; y < h; ++y) {
            int p = pro.at(x, y);
            int q = gen.at(x, y);
            if (p == q)
                part.cons.at(x, y, q) = 1;
            else if (scores[static_cast<size_t>(p)] < scores[static_cast<size_t>(q)])
                part.hmis.at(x, y, q) = 1;
            else
                part.lmis.at(x, y, q) = 1;
        }
    return part;
}

WeightMap confidence_weights(const ProbabilityMap& teacher_prob, const OneHotMap& selection) {
    const int w = teacher_prob.width(), h = teacher_prob.height(), c = teacher_prob.classes();
    if (selection.width != w || selection.height != h || selection.classes != c)
        throw std::invalid_argument("confidence_weights: shape mismatch");
    WeightMap out(w, h, 0.0f);
    for (int x = 0; x < w; ++x)
        for (int y = 0; y < h; ++y) {
            if (selection.channel_sum(x, y) == 0) continue;
            float m = teacher_prob.data.at(x, y, 0);
            for (int k = 1; k < c; ++k) m = std::max(m, teacher_prob.data.at(x, y, k));
            out.at(x, y) = m;
        }
    return out;
}

WeightedCeResult weighted_ce_loss(const ProbabilityMap& student_prob, const OneHotMap& target,
                                  const WeightMap& weights, CeNormalization norm) {
    const int w = student_prob.width(), h = student_prob.height(), c = student_prob.classes();
    if (target.width != w || target.height != h || target.classes != c ||
        weights.width != w || weights.height != h)
        throw std::invalid_argument("weighted_ce_loss: shape mismatch");

    WeightedCeResult r;
    r.dlogits = DMap(w, h, c);

    int64_t selected = 0;
    for (int x = 0; x < w; ++x)
        for (int y = 0; y < h; ++y)
            if (target.channel_sum(x, y) > 0) ++selected;
    if (selected == 0) return r;

    const int64_t denom_pixels =
        norm == CeNormalization::kAllPixels ? static_cast<int64_t>(w) * h : selected;
    const double inv_n = 1.0 / static_cast<double>(denom_pixels);

    double loss = 0.0;
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            int t = target.active_class(x, y);
            if (t < 0) continue;
            double wgt = weights.at(x, y);
            if (wgt == 0.0) continue;
            double p = std::max(static_cast<double>(student_prob.data.at(x, y, t)), 1e-30);
            loss -= wgt * std::log(p);
            for (int k = 0; k < c; ++k) {
                double grad =
                    static_cast<double>(student_prob.data.at(x, y, k)) - (k == t ? 1.0 : 0.0);
                r.dlogits.at(x, y, k) = wgt * grad * inv_n;
            }
        }
    }
    r.loss = loss * inv_n;
    return r;
}

namespace {

void accumulate_into(OneHotMap& dst, const OneHotMap& src) {
    for (size_t i = 0; i < dst.v.size(); ++i) dst.v[i] = static_cast<uint8_t>(dst.v[i] | src.v[i]);
}

}  // namespace

UnsupTargets professional_step_targets(std::span<const ProbabilityMap> pro_student_probs,
                                       std::span<const ProbabilityMap> gen_teacher_probs,
                                       SelectionMode mode, std::vector<double>* ema_confusion,
                                       double ema_decay) {
    if (pro_student_probs.size() != gen_teacher_probs.size())
        throw std::invalid_argument("professional_step_targets: batch size mismatch");
    UnsupTargets out;
    if (pro_student_probs.empty()) return out;

    const int c = gen_teacher_probs[0].classes();
    out.confusion = ConfusionMatrix(c);
    for (size_t i = 0; i < pro_student_probs.size(); ++i)
        out.confusion.add(argmax_map(pro_student_probs[i]), argmax_map(gen_teacher_probs[i]));

    if (ema_confusion != nullptr) {
        if (ema_confusion->empty()) {
            ema_confusion->assign(out.confusion.m.begin(), out.confusion.m.end());
        } else {
            for (size_t i = 0; i < ema_confusion->size(); ++i)
                (*ema_confusion)[i] = ema_decay * (*ema_confusion)[i] +
                                      (1.0 - ema_decay) * static_cast<double>(out.confusion.m[i]);
        }
        out.scores = mismatch_scores(*ema_confusion, c);
    } else {
        out.scores = mismatch_scores(out.confusion);
    }

    for (size_t i = 0; i < pro_student_probs.size(); ++i) {
        PseudoLabelPartition part =
            partition_pseudo_labels(pro_student_probs[i], gen_teacher_probs[i], out.scores);
        out.cons_pixels += part.cons_count();
        out.hmis_pixels += part.hmis_count();
        out.lmis_pixels += part.lmis_count();

        OneHotMap target = part.cons;
        switch (mode) {
            case SelectionMode::kConsOnly:
                break;
            case SelectionMode::kConsHmis:
                accumulate_into(target, part.hmis);
                break;
            case SelectionMode::kConsLmis:
                accumulate_into(target, part.lmis);
                break;
            case SelectionMode::kAll:
                accumulate_into(target, part.hmis);
                accumulate_into(target, part.lmis);
                break;
        }
        out.weights.push_back(confidence_weights(gen_teacher_probs[i], target));
        out.targets.push_back(std::move(target));
    }
    return out;
}

UnsupTargets general_step_targets(std::span<const ProbabilityMap> pro_teacher_probs) {
    UnsupTargets out;
    for (const ProbabilityMap& prob : pro_teacher_probs) {
        OneHotMap target = one_hot(prob);
        out.weights.push_back(confidence_weights(prob, target));
        out.targets.push_back(std::move(target));
    }
    return out;
}

}  // namespace stpg
