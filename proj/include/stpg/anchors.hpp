#pragma once

#include <deque>
#include <optional>
#include <span>
#include <vector>

#include "stpg/rng.hpp"
#include "stpg/tensor.hpp"

namespace stpg {

// Dual contrastive learning with anchors: unit-norm class anchors
// pre-optimized for spherical uniformity, EMA class prototypes, Hungarian
// prototype-anchor matching, a proximity-guided per-class FIFO memory bank,
// and the anchor-contrastive and similarity losses.

struct AnchorSet {
    Tensor v;  // [C,D], unit-norm rows
    double tau = 0.5;
    bool converged = true;

    int classes() const { return v.dim(0); }
    int dim() const { return v.dim(1); }
    std::span<const float> row(int i) const {
        return {v.data() + static_cast<size_t>(i) * v.dim(1), static_cast<size_t>(v.dim(1))};
    }
};

// (1/C) * sum_i log sum_j exp(v_i . v_j / tau), self-terms included.
double anchor_energy(const Tensor& v, double tau);

struct AnchorFitOptions {
    double tol = 1e-9;       // minimum improvement over `window` steps
    int window = 100;
    int max_steps = 50000;
    double init_step = 0.5;
    std::vector<double>* energy_trace = nullptr;  // accepted-step energies
};

// Projected gradient descent on the unit sphere with backtracking; accepted
// steps never increase the energy. Non-convergence returns best-so-far with
// converged=false.
AnchorSet fit_anchors(int num_classes, int dim, double tau, Rng& rng,
                      const AnchorFitOptions& opts = {});

// EMA class prototypes over Gen-Teacher projection features of labeled
// pixels. Rows stay unit-norm; a class's first observation initializes its
// row directly.
struct PrototypeBank {
    Tensor c;  // [C,D]
    std::vector<uint8_t> initialized;
    double alpha = 0.99;

    PrototypeBank() = default;
    PrototypeBank(int classes, int dim, double alpha_ = 0.99)
        : c(Tensor({classes, dim})), initialized(static_cast<size_t>(classes), 0), alpha(alpha_) {}

    int classes() const { return c.dim(0); }
    int dim() const { return c.dim(1); }
    bool all_initialized() const;

    void update(int cls, std::span<const double> batch_mean);
};

// Permutation sigma: class i is served by anchor sigma[i].
using Assignment = std::vector<int>;

// Exact optimal linear assignment on an n x n cost matrix (row-major),
// ties broken toward the lexicographically smallest permutation.
Assignment solve_assignment(const std::vector<double>& cost, int n);
double assignment_cost(const std::vector<double>& cost, int n, const Assignment& perm);

// argmin_sigma sum_i ||v_{sigma_i} - c_i||_2 via the Hungarian algorithm.
// Throws std::logic_error if any prototype is uninitialized.
Assignment match_prototypes(const AnchorSet& anchors, const PrototypeBank& bank);

// Per-class FIFO queues of unit-norm features; only confidence > phi enters,
// and per step only the top-K closest to the class's matched anchor.
class MemoryBank {
public:
    struct Entry {
        std::vector<float> f;  // unit-norm
        float confidence;
    };

    MemoryBank() = default;
    MemoryBank(int classes, int dim, int capacity, double phi)
        : classes_(classes), dim_(dim), capacity_(capacity), phi_(phi),
          queues_(static_cast<size_t>(classes)) {}

    int classes() const { return classes_; }
    int dim() const { return dim_; }
    int capacity() const { return capacity_; }
    double phi() const { return phi_; }

    const std::deque<Entry>& queue(int cls) const { return queues_[static_cast<size_t>(cls)]; }
    int64_t total_entries() const;

    // Candidates carry (feature, confidence, class); features are normalized
    // on insertion. K limits insertions per class for this call.
    void insert(std::span<const std::vector<float>> features, std::span<const float> confidences,
                std::span<const int> labels, const AnchorSet& anchors, const Assignment& sigma,
                int top_k);

    std::deque<Entry>& mutable_queue(int cls) { return queues_[static_cast<size_t>(cls)]; }

private:
    int classes_ = 0, dim_ = 0, capacity_ = 0;
    double phi_ = 0.95;
    std::vector<std::deque<Entry>> queues_;
};

struct LossGrad {
    double loss = 0.0;
    std::vector<double> dfeat;
};

// -log softmax over anchor similarities at the feature's own class. The
// input is used as-is (callers pass unit-norm features); anchors receive no
// gradient.
LossGrad anchor_contrastive_loss(std::span<const float> f, int cls, const AnchorSet& anchors,
                                 const Assignment& sigma);

// Mean of (1 - cos(f, i+)) over the class queue; empty queue gives 0. The
// cosine normalizes f internally, so the gradient is exact for any nonzero
// input.
LossGrad similarity_loss(std::span<const float> f, int cls, const MemoryBank& bank);

// Batch contrastive term over raw (unnormalized) projection features:
// normalizes each feature, applies both losses, and chain-rules the
// normalization so dfeats is exact w.r.t. the raw inputs. Losses are
// averaged over the usable features; zero samples give zero loss. Features
// with norm below 1e-3 carry no direction (dead ReLU pixels) and are
// excluded with zero gradient.
struct BatchContrastive {
    double loss_ac = 0.0;
    double loss_sim = 0.0;
    std::vector<std::vector<double>> dfeats;  // d(loss_ac+loss_sim)/d(raw feature)
};
BatchContrastive contrastive_batch_loss(std::span<const std::vector<float>> raw_features,
                                        std::span<const int> classes, const AnchorSet& anchors,
                                        const Assignment& sigma, const MemoryBank& bank);

std::vector<float> l2_normalized(std::span<const float> f);

}  // namespace stpg
