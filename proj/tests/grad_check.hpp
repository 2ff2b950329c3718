#pragma once

#include <cmath>
#include <functional>

#include "stpg/model.hpp"

namespace stpg::testing {

struct GradCheckResult {
    double max_abs_diff = 0.0;
    double max_fd = 0.0;
    // max |analytic - fd| normalized by the largest finite-difference entry
    double relative_error() const { return max_abs_diff / (max_fd + 1e-12); }
};

// Central-difference oracle over every model parameter. `loss` must
// recompute the loss from the (mutated) params on each call; it stays
// independent of the analytic backward path it checks.
inline GradCheckResult finite_difference_check(ModelParams& params, const Grads& analytic,
                                               const std::function<double()>& loss,
                                               double eps = 1e-3) {
    GradCheckResult r;
    size_t ti = 0;
    params.for_each_tensor([&](Tensor& t) {
        for (int64_t j = 0; j < t.size(); ++j) {
            float original = t[j];
            float fp = static_cast<float>(original + eps);
            float fm = static_cast<float>(original - eps);
            t[j] = fp;
            double plus = loss();
            t[j] = fm;
            double minus = loss();
            t[j] = original;
            // divide by the float32 delta actually applied
            double fd = (plus - minus) / (static_cast<double>(fp) - static_cast<double>(fm));
            double diff = std::fabs(analytic.g[ti][static_cast<size_t>(j)] - fd);
            r.max_abs_diff = std::max(r.max_abs_diff, diff);
            r.max_fd = std::max(r.max_fd, std::fabs(fd));
        }
        ++ti;
    });
    return r;
}

}  // namespace stpg::testing
