#include "stpg/anchors.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace stpg {
namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

double dot(std::span<const float> a, std::span<const float> b) {
    double s = 0.0;
    for (size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a[i]) * b[i];
    return s;
}

double energy_and_grad(const std::vector<double>& v, int c, int d, double tau,
                       std::vector<double>* grad) {
    // s[i][j] = v_i . v_j / tau
    std::vector<double> s(static_cast<size_t>(c) * c);
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) {
            double acc = 0.0;
            for (int k = 0; k < d; ++k)
                acc += v[static_cast<size_t>(i) * d + k] * v[static_cast<size_t>(j) * d + k];
            s[static_cast<size_t>(i) * c + j] = acc / tau;
        }
    std::vector<double> lse(static_cast<size_t>(c));   // log sum_j exp(s_ij)
    std::vector<double> sum(static_cast<size_t>(c));
    double total = 0.0;
    for (int i = 0; i < c; ++i) {
        double m = s[static_cast<size_t>(i) * c];
        for (int j = 1; j < c; ++j) m = std::max(m, s[static_cast<size_t>(i) * c + j]);
        double acc = 0.0;
        for (int j = 0; j < c; ++j) acc += std::exp(s[static_cast<size_t>(i) * c + j] - m);
        sum[static_cast<size_t>(i)] = acc;
        lse[static_cast<size_t>(i)] = m + std::log(acc);
        total += lse[static_cast<size_t>(i)];
    }
    total /= c;

    if (grad != nullptr) {
        std::fill(grad->begin(), grad->end(), 0.0);
        // softmax weights w_ij = exp(s_ij) / sum_j exp(s_ij)
        for (int i = 0; i < c; ++i) {
            for (int j = 0; j < c; ++j) {
                double w = std::exp(s[static_cast<size_t>(i) * c + j] - lse[static_cast<size_t>(i)]);
                double coef = w / (c * tau);
                if (i == j) {
                    for (int k = 0; k < d; ++k)
                        (*grad)[static_cast<size_t>(i) * d + k] +=
                            2.0 * coef * v[static_cast<size_t>(i) * d + k];
                } else {
                    // dL/dv_i gets coef * v_j; dL/dv_j gets coef * v_i
                    for (int k = 0; k < d; ++k) {
                        (*grad)[static_cast<size_t>(i) * d + k] += coef * v[static_cast<size_t>(j) * d + k];
                        (*grad)[static_cast<size_t>(j) * d + k] += coef * v[static_cast<size_t>(i) * d + k];
                    }
                }
            }
        }
    }
    return total;
}

void renormalize_rows(std::vector<double>& v, int c, int d) {
    for (int i = 0; i < c; ++i) {
        double n = 0.0;
        for (int k = 0; k < d; ++k) {
            double x = v[static_cast<size_t>(i) * d + k];
            n += x * x;
        }
        n = std::sqrt(std::max(n, 1e-300));
        for (int k = 0; k < d; ++k) v[static_cast<size_t>(i) * d + k] /= n;
    }
}

}  // namespace

double anchor_energy(const Tensor& v, double tau) {
    const int c = v.dim(0), d = v.dim(1);
    std::vector<double> w(static_cast<size_t>(c) * d);
    for (int64_t i = 0; i < v.size(); ++i) w[static_cast<size_t>(i)] = v[i];
    return energy_and_grad(w, c, d, tau, nullptr);
}

AnchorSet fit_anchors(int num_classes, int dim, double tau, Rng& rng,
                      const AnchorFitOptions& opts) {
    if (num_classes < 2 || dim < 2)
        throw std::invalid_argument("fit_anchors: need num_classes >= 2 and dim >= 2");
    const int c = num_classes, d = dim;

    std::vector<double> v(static_cast<size_t>(c) * d);
    for (auto& x : v) x = rng.normal();
    renormalize_rows(v, c, d);

    std::vector<double> grad(v.size()), trial(v.size());
    double step = opts.init_step;
    double energy = energy_and_grad(v, c, d, tau, &grad);

    std::vector<double> best = v;
    double best_energy = energy;
    double window_start_energy = energy;
    bool converged = false;
    if (opts.energy_trace != nullptr) opts.energy_trace->push_back(energy);

    for (int iter = 0; iter < opts.max_steps; ++iter) {
        // tangent projection per row keeps the update on the sphere
        for (int i = 0; i < c; ++i) {
            double g_dot_v = 0.0;
            for (int k = 0; k < d; ++k)
                g_dot_v += grad[static_cast<size_t>(i) * d + k] * v[static_cast<size_t>(i) * d + k];
            for (int k = 0; k < d; ++k)
                grad[static_cast<size_t>(i) * d + k] -= g_dot_v * v[static_cast<size_t>(i) * d + k];
        }

        // backtracking: halve on increase, never accept an ascent step
        bool accepted = false;
        while (step > 1e-14) {
            for (size_t j = 0; j < v.size(); ++j) trial[j] = v[j] - step * grad[j];
            renormalize_rows(trial, c, d);
            double trial_energy = energy_and_grad(trial, c, d, tau, nullptr);
            if (trial_energy <= energy) {
                v.swap(trial);
                energy = trial_energy;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if (!accepted) {
            converged = true;  // no descent direction at representable step size
            break;
        }
        if (opts.energy_trace != nullptr) opts.energy_trace->push_back(energy);
        step = std::min(step * 1.1, 10.0);

        if (energy < best_energy) {
            best_energy = energy;
            best = v;
        }
        if ((iter + 1) % opts.window == 0) {
            if (window_start_energy - energy < opts.tol) {
                converged = true;
                break;
            }
            window_start_energy = energy;
        }
        energy = energy_and_grad(v, c, d, tau, &grad);
    }

    renormalize_rows(best, c, d);
    AnchorSet out;
    out.v = Tensor({c, d});
    for (int64_t i = 0; i < out.v.size(); ++i) out.v[i] = static_cast<float>(best[static_cast<size_t>(i)]);
    // float cast perturbs norms by ~1e-8; restore them in float
    for (int i = 0; i < c; ++i) {
        double n = 0.0;
        for (int k = 0; k < d; ++k) n += static_cast<double>(out.v.at(i, k)) * out.v.at(i, k);
        n = std::sqrt(n);
        for (int k = 0; k < d; ++k) out.v.at(i, k) = static_cast<float>(out.v.at(i, k) / n);
    }
    out.tau = tau;
    out.converged = converged;
    return out;
}

bool PrototypeBank::all_initialized() const {
    for (uint8_t i : initialized)
        if (!i) return false;
    return true;
}

void PrototypeBank::update(int cls, std::span<const double> batch_mean) {
    const int d = dim();
    if (static_cast<int>(batch_mean.size()) != d)
        throw std::invalid_argument("PrototypeBank::update: dimension mismatch");
    std::vector<double> blended(static_cast<size_t>(d));
    if (!initialized[static_cast<size_t>(cls)]) {
        for (int k = 0; k < d; ++k) blended[static_cast<size_t>(k)] = batch_mean[static_cast<size_t>(k)];
        initialized[static_cast<size_t>(cls)] = 1;
    } else {
        for (int k = 0; k < d; ++k)
            blended[static_cast<size_t>(k)] =
                alpha * c.at(cls, k) + (1.0 - alpha) * batch_mean[static_cast<size_t>(k)];
    }
    double n = 0.0;
    for (double x : blended) n += x * x;
    n = std::sqrt(std::max(n, 1e-300));
    for (int k = 0; k < d; ++k) c.at(cls, k) = static_cast<float>(blended[static_cast<size_t>(k)] / n);
}

namespace {

// Classic O(n^3) Hungarian with potentials; exact optimum for real costs.
Assignment hungarian(const std::vector<double>& a, int n) {
    std::vector<double> u(static_cast<size_t>(n) + 1, 0.0), v(static_cast<size_t>(n) + 1, 0.0);
    std::vector<int> p(static_cast<size_t>(n) + 1, 0), way(static_cast<size_t>(n) + 1, 0);
    for (int i = 1; i <= n; ++i) {
        p[0] = i;
        int j0 = 0;
        std::vector<double> minv(static_cast<size_t>(n) + 1, kInf);
        std::vector<char> used(static_cast<size_t>(n) + 1, 0);
        do {
            used[static_cast<size_t>(j0)] = 1;
            int i0 = p[static_cast<size_t>(j0)], j1 = -1;
            double delta = kInf;
            for (int j = 1; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) continue;
                double cur = a[static_cast<size_t>(i0 - 1) * n + (j - 1)] - u[static_cast<size_t>(i0)] -
                             v[static_cast<size_t>(j)];
                if (cur < minv[static_cast<size_t>(j)]) {
                    minv[static_cast<size_t>(j)] = cur;
                    way[static_cast<size_t>(j)] = j0;
                }
                if (minv[static_cast<size_t>(j)] < delta) {
                    delta = minv[static_cast<size_t>(j)];
                    j1 = j;
                }
            }
            for (int j = 0; j <= n; ++j) {
                if (used[static_cast<size_t>(j)]) {
                    u[static_cast<size_t>(p[static_cast<size_t>(j)])] += delta;
                    v[static_cast<size_t>(j)] -= delta;
                } else {
                    minv[static_cast<size_t>(j)] -= delta;
                }
            }
            j0 = j1;
        } while (p[static_cast<size_t>(j0)] != 0);
        do {
            int j1 = way[static_cast<size_t>(j0)];
            p[static_cast<size_t>(j0)] = p[static_cast<size_t>(j1)];
            j0 = j1;
        } while (j0);
    }
    Assignment perm(static_cast<size_t>(n));
    for (int j = 1; j <= n; ++j)
        if (p[static_cast<size_t>(j)]) perm[static_cast<size_t>(p[static_cast<size_t>(j)] - 1)] = j - 1;
    return perm;
}

}  // namespace

double assignment_cost(const std::vector<double>& cost, int n, const Assignment& perm) {
    double total = 0.0;
    for (int i = 0; i < n; ++i) total += cost[static_cast<size_t>(i) * n + perm[static_cast<size_t>(i)]];
    return total;
}

Assignment solve_assignment(const std::vector<double>& cost, int n) {
    if (n < 1) throw std::invalid_argument("solve_assignment: empty instance");
    if (static_cast<int64_t>(cost.size()) != static_cast<int64_t>(n) * n)
        throw std::invalid_argument("solve_assignment: cost matrix size mismatch");
    Assignment base = hungarian(cost, n);
    const double best = assignment_cost(cost, n, base);

    // Lexicographic tie-break: fix each row to the smallest column that can
    // still be completed at the optimal total.
    Assignment fixed(static_cast<size_t>(n), -1);
    std::vector<char> used_col(static_cast<size_t>(n), 0);
    for (int i = 0; i < n; ++i) {
        bool done = false;
        for (int j = 0; j < n && !done; ++j) {
            if (used_col[static_cast<size_t>(j)]) continue;
            // candidate permutation: fixed prefix, (i,j), optimal completion
            Assignment candidate = fixed;
            candidate[static_cast<size_t>(i)] = j;
            int m = n - i - 1;
            if (m > 0) {
                std::vector<int> free_cols;
                for (int q = 0; q < n; ++q)
                    if (!used_col[static_cast<size_t>(q)] && q != j) free_cols.push_back(q);
                std::vector<double> sub(static_cast<size_t>(m) * m);
                for (int r = 0; r < m; ++r)
                    for (int q = 0; q < m; ++q)
                        sub[static_cast<size_t>(r) * m + q] =
                            cost[static_cast<size_t>(i + 1 + r) * n + free_cols[static_cast<size_t>(q)]];
                Assignment sub_perm = hungarian(sub, m);
                for (int r = 0; r < m; ++r)
                    candidate[static_cast<size_t>(i + 1 + r)] = free_cols[static_cast<size_t>(sub_perm[static_cast<size_t>(r)])];
            }
            if (assignment_cost(cost, n, candidate) <= best) {
                fixed[static_cast<size_t>(i)] = j;
                used_col[static_cast<size_t>(j)] = 1;
                done = true;
            }
        }
        if (!done) {  // numerically impossible; keep the base column
            fixed[static_cast<size_t>(i)] = base[static_cast<size_t>(i)];
            used_col[static_cast<size_t>(base[static_cast<size_t>(i)])] = 1;
        }
    }
    return fixed;
}

Assignment match_prototypes(const AnchorSet& anchors, const PrototypeBank& bank) {
    const int c = anchors.classes(), d = anchors.dim();
    if (bank.classes() != c || bank.dim() != d)
        throw std::invalid_argument("match_prototypes: anchor/prototype shape mismatch");
    if (!bank.all_initialized())
        throw std::logic_error("match_prototypes: uninitialized prototype (warm-up incomplete)");

    // cost[i][j] = ||v_j - c_i||_2
    std::vector<double> cost(static_cast<size_t>(c) * c);
    for (int i = 0; i < c; ++i)
        for (int j = 0; j < c; ++j) {
            double s = 0.0;
            for (int k = 0; k < d; ++k) {
                double diff = static_cast<double>(anchors.v.at(j, k)) - bank.c.at(i, k);
                s += diff * diff;
            }
            cost[static_cast<size_t>(i) * c + j] = std::sqrt(s);
        }
    return solve_assignment(cost, c);
}

int64_t MemoryBank::total_entries() const {
    int64_t n = 0;
    for (const auto& q : queues_) n += static_cast<int64_t>(q.size());
    return n;
}

void MemoryBank::insert(std::span<const std::vector<float>> features,
                        std::span<const float> confidences, std::span<const int> labels,
                        const AnchorSet& anchors, const Assignment& sigma, int top_k) {
    if (features.size() != confidences.size() || features.size() != labels.size())
        throw std::invalid_argument("MemoryBank::insert: candidate arrays must align");

    // survivor indices per class, confidence strictly above phi
    std::vector<std::vector<int>> per_class(static_cast<size_t>(classes_));
    for (size_t i = 0; i < features.size(); ++i) {
        if (static_cast<double>(confidences[i]) > phi_)
            per_class[static_cast<size_t>(labels[i])].push_back(static_cast<int>(i));
    }

    for (int cls = 0; cls < classes_; ++cls) {
        auto& cand = per_class[static_cast<size_t>(cls)];
        if (cand.empty()) continue;
        std::span<const float> anchor = anchors.row(sigma[static_cast<size_t>(cls)]);

        std::vector<std::pair<double, int>> ranked;
        ranked.reserve(cand.size());
        for (int idx : cand) {
            std::vector<float> unit = l2_normalized(features[static_cast<size_t>(idx)]);
            double s = 0.0;
            for (int k = 0; k < dim_; ++k) {
                double diff = static_cast<double>(unit[static_cast<size_t>(k)]) - anchor[static_cast<size_t>(k)];
                s += diff * diff;
            }
            ranked.emplace_back(std::sqrt(s), idx);
        }
        std::stable_sort(ranked.begin(), ranked.end(),
                         [](const auto& a, const auto& b) { return a.first < b.first; });

        auto& q = queues_[static_cast<size_t>(cls)];
        int take = std::min<int>(top_k, static_cast<int>(ranked.size()));
        for (int r = 0; r < take; ++r) {
            int idx = ranked[static_cast<size_t>(r)].second;
            q.push_back({l2_normalized(features[static_cast<size_t>(idx)]), confidences[static_cast<size_t>(idx)]});
            if (static_cast<int>(q.size()) > capacity_) q.pop_front();
        }
    }
}

std::vector<float> l2_normalized(std::span<const float> f) {
    double n = 0.0;
    for (float x : f) n += static_cast<double>(x) * x;
    n = std::sqrt(std::max(n, 1e-24));
    std::vector<float> out(f.size());
    for (size_t i = 0; i < f.size(); ++i) out[i] = static_cast<float>(f[i] / n);
    return out;
}

LossGrad anchor_contrastive_loss(std::span<const float> f, int cls, const AnchorSet& anchors,
                                 const Assignment& sigma) {
    const int c = anchors.classes(), d = anchors.dim();
    if (static_cast<int>(f.size()) != d)
        throw std::invalid_argument("anchor_contrastive_loss: feature dimension mismatch");

    std::vector<double> logits(static_cast<size_t>(c));
    for (int j = 0; j < c; ++j)
        logits[static_cast<size_t>(j)] = dot(f, anchors.row(sigma[static_cast<size_t>(j)])) / anchors.tau;
    double m = logits[0];
    for (double x : logits) m = std::max(m, x);
    double sum = 0.0;
    for (double x : logits) sum += std::exp(x - m);

    LossGrad r;
    r.loss = -(logits[static_cast<size_t>(cls)] - m - std::log(sum));
    r.dfeat.assign(static_cast<size_t>(d), 0.0);
    for (int j = 0; j < c; ++j) {
        double p = std::exp(logits[static_cast<size_t>(j)] - m) / sum;
        double coef = (p - (j == cls ? 1.0 : 0.0)) / anchors.tau;
        std::span<const float> vj = anchors.row(sigma[static_cast<size_t>(j)]);
        for (int k = 0; k < d; ++k) r.dfeat[static_cast<size_t>(k)] += coef * vj[static_cast<size_t>(k)];
    }
    return r;
}

LossGrad similarity_loss(std::span<const float> f, int cls, const MemoryBank& bank) {
    const int d = bank.dim();
    LossGrad r;
    r.dfeat.assign(static_cast<size_t>(d), 0.0);
    const auto& q = bank.queue(cls);
    if (q.empty()) return r;

    double norm = 0.0;
    for (float x : f) norm += static_cast<double>(x) * x;
    norm = std::sqrt(std::max(norm, 1e-24));
    const double inv_n = 1.0 / static_cast<double>(q.size());

    for (const auto& entry : q) {
        double fig = dot(f, entry.f);  // bank entries are unit-norm
        double cosv = fig / norm;
        r.loss += (1.0 - cosv) * inv_n;
        // d(1 - f.i/||f||)/df = -i/||f|| + (f.i) f / ||f||^3
        for (int k = 0; k < d; ++k)
            r.dfeat[static_cast<size_t>(k)] +=
                inv_n * (-entry.f[static_cast<size_t>(k)] / norm + fig * f[static_cast<size_t>(k)] / (norm * norm * norm));
    }
    return r;
}

BatchContrastive contrastive_batch_loss(std::span<const std::vector<float>> raw_features,
                                        std::span<const int> classes, const AnchorSet& anchors,
                                        const Assignment& sigma, const MemoryBank& bank) {
    BatchContrastive out;
    const size_t n = raw_features.size();
    if (classes.size() != n)
        throw std::invalid_argument("contrastive_batch_loss: class list must align with features");
    out.dfeats.resize(n);
    if (n == 0) return out;

    const int d = anchors.dim();

    // features without a usable direction (dead ReLU pixels give exact
    // zeros) are dropped; they get zero gradient and no loss share
    constexpr double kNormFloor = 1e-3;
    std::vector<size_t> used;
    for (size_t i = 0; i < n; ++i) {
        double norm = 0.0;
        for (float x : raw_features[i]) norm += static_cast<double>(x) * x;
        if (std::sqrt(norm) >= kNormFloor) used.push_back(i);
        out.dfeats[i].assign(static_cast<size_t>(d), 0.0);
    }
    if (used.empty()) return out;
    const double inv_n = 1.0 / static_cast<double>(used.size());

    for (size_t i : used) {
        const std::vector<float>& raw = raw_features[i];
        double norm = 0.0;
        for (float x : raw) norm += static_cast<double>(x) * x;
        norm = std::sqrt(norm);
        std::vector<float> unit(static_cast<size_t>(d));
        for (int k = 0; k < d; ++k) unit[static_cast<size_t>(k)] = static_cast<float>(raw[static_cast<size_t>(k)] / norm);

        LossGrad ac = anchor_contrastive_loss(unit, classes[i], anchors, sigma);
        LossGrad sim = similarity_loss(unit, classes[i], bank);
        out.loss_ac += ac.loss * inv_n;
        out.loss_sim += sim.loss * inv_n;

        // chain through u = raw/||raw||: dL/draw = (I - u u^T) dL/du / ||raw||
        std::vector<double> du(static_cast<size_t>(d));
        for (int k = 0; k < d; ++k)
            du[static_cast<size_t>(k)] = (ac.dfeat[static_cast<size_t>(k)] + sim.dfeat[static_cast<size_t>(k)]) * inv_n;
        double du_dot_u = 0.0;
        for (int k = 0; k < d; ++k) du_dot_u += du[static_cast<size_t>(k)] * unit[static_cast<size_t>(k)];
        for (int k = 0; k < d; ++k)
            out.dfeats[i][static_cast<size_t>(k)] =
                (du[static_cast<size_t>(k)] - du_dot_u * unit[static_cast<size_t>(k)]) / norm;
    }
    return out;
}

}  // namespace stpg
