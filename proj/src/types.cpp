#include "stpg/types.hpp"

#include <cmath>
#include <stdexcept>

namespace stpg {

bool ProbabilityMap::valid(double tol) const {
    const int w = width(), h = height(), c = classes();
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            double sum = 0.0;
            for (int k = 0; k < c; ++k) {
                float p = data.at(x, y, k);
                if (!(p >= 0.0f && p <= 1.0f)) return false;
                sum += p;
            }
            if (std::fabs(sum - 1.0) > tol) return false;
        }
    }
    return true;
}

ProbabilityMap softmax_channelwise(const Tensor& logits) {
    if (logits.rank() != 3)
        throw std::invalid_argument("softmax_channelwise: expected rank-3 logits, got " +
                                    shape_string(logits.shape()));
    if (!logits.all_finite())
        throw std::invalid_argument("softmax_channelwise: non-finite logits");

    const int w = logits.dim(0), h = logits.dim(1), c = logits.dim(2);
    ProbabilityMap out{Tensor({w, h, c})};
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            float m = logits.at(x, y, 0);
            for (int k = 1; k < c; ++k) m = std::max(m, logits.at(x, y, k));
            double sum = 0.0;
            for (int k = 0; k < c; ++k) sum += std::exp(static_cast<double>(logits.at(x, y, k) - m));
            for (int k = 0; k < c; ++k)
                out.data.at(x, y, k) =
                    static_cast<float>(std::exp(static_cast<double>(logits.at(x, y, k) - m)) / sum);
        }
    }
    return out;
}

OneHotMap one_hot(const ProbabilityMap& p) {
    const int w = p.width(), h = p.height(), c = p.classes();
    OneHotMap out(w, h, c);
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            int best = 0;
            float bv = p.data.at(x, y, 0);
            for (int k = 1; k < c; ++k) {
                float v = p.data.at(x, y, k);
                if (v > bv) {
                    bv = v;
                    best = k;
                }
            }
            out.at(x, y, best) = 1;
        }
    }
    return out;
}

LabelMap argmax_map(const ProbabilityMap& p) {
    const int w = p.width(), h = p.height(), c = p.classes();
    LabelMap out(w, h);
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            int best = 0;
            float bv = p.data.at(x, y, 0);
            for (int k = 1; k < c; ++k) {
                float v = p.data.at(x, y, k);
                if (v > bv) {
                    bv = v;
                    best = k;
                }
            }
            out.at(x, y) = static_cast<uint8_t>(best);
        }
    }
    return out;
}

LabelMap to_label_map(const OneHotMap& m, uint8_t inactive) {
    LabelMap out(m.width, m.height, inactive);
    for (int x = 0; x < m.width; ++x)
        for (int y = 0; y < m.height; ++y) {
            int c = m.active_class(x, y);
            if (c >= 0) out.at(x, y) = static_cast<uint8_t>(c);
        }
    return out;
}

}  // namespace stpg
