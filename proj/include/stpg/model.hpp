#pragma once

#include <cstdint>
#include <vector>

#include "stpg/rng.hpp"
#include "stpg/tensor.hpp"
#include "stpg/types.hpp"

namespace stpg {

// Minimal per-pixel segmentation network: 3x3 conv -> ReLU -> {1x1 seg head,
// 1x1 -> ReLU -> 1x1 projection head}. Parameters are float32; gradient and
// loss accumulation run in float64.

struct ModelDims {
    int in_channels = 8;
    int hidden_dim = 16;
    int num_classes = 6;
    int feat_dim = 16;

    friend bool operator==(const ModelDims&, const ModelDims&) = default;
};

struct ModelParams {
    ModelDims dims;
    Tensor stem_w;   // [Hdim,3,3,F]
    Tensor stem_b;   // [Hdim]
    Tensor seg_w;    // [C,Hdim]
    Tensor seg_b;    // [C]
    Tensor proj1_w;  // [Hdim,Hdim]
    Tensor proj1_b;  // [Hdim]
    Tensor proj2_w;  // [D,Hdim]
    Tensor proj2_b;  // [D]

    // Fixed visitation order; optimizer state, gradients and checkpoints all
    // rely on it.
    template <typename F>
    void for_each_tensor(F&& f) {
        f(stem_w); f(stem_b); f(seg_w); f(seg_b);
        f(proj1_w); f(proj1_b); f(proj2_w); f(proj2_b);
    }
    template <typename F>
    void for_each_tensor(F&& f) const {
        f(stem_w); f(stem_b); f(seg_w); f(seg_b);
        f(proj1_w); f(proj1_b); f(proj2_w); f(proj2_b);
    }

    int64_t parameter_count() const;
};

// He-style uniform fan-in init; biases zero.
ModelParams init_params(const ModelDims& dims, Rng& rng);

bool params_bit_equal(const ModelParams& a, const ModelParams& b);

// Double-precision per-pixel gradient grid, [W,H,C] indexing.
struct DMap {
    int w = 0, h = 0, c = 0;
    std::vector<double> v;

    DMap() = default;
    DMap(int w_, int h_, int c_) : w(w_), h(h_), c(c_), v(static_cast<size_t>(w_) * h_ * c_, 0.0) {}

    double& at(int x, int y, int k) { return v[(static_cast<size_t>(x) * h + y) * c + k]; }
    double at(int x, int y, int k) const { return v[(static_cast<size_t>(x) * h + y) * c + k]; }
    bool empty() const { return v.empty(); }
};

struct ForwardCache {
    Tensor input;     // [W,H,F]
    Tensor pre_act;   // [W,H,Hdim], pre-ReLU stem output
    Tensor hidden;    // [W,H,Hdim]
    Tensor proj_pre;  // [W,H,Hdim], pre-ReLU projection mid
    Tensor proj_mid;  // [W,H,Hdim], post-ReLU (and dropout when enabled)
    Tensor drop_mask; // empty unless dropout enabled
};

struct ForwardResult {
    Tensor logits;    // [W,H,C]
    Tensor features;  // [W,H,D], unnormalized projection output
    ForwardCache cache;
};

struct ForwardOptions {
    double dropout_p = 0.0;  // inverted dropout on the projection mid layer
    Rng* rng = nullptr;      // required when dropout_p > 0
};

ForwardResult forward(const ModelParams& params, const Image& img,
                      const ForwardOptions& opts = {});

// Parameter gradients in float64, aligned with for_each_tensor order.
struct Grads {
    std::vector<std::vector<double>> g;

    void init_like(const ModelParams& params);
    void add_scaled(const Grads& other, double scale);
    void scale(double s);
    bool all_finite() const;
    double max_abs() const;
};

// Accumulates exact gradients of the composite loss into `out`. Either of
// dlogits / dfeatures may be empty.
void backward(const ModelParams& params, const ForwardCache& cache, const DMap& dlogits,
              const DMap& dfeatures, Grads& out);

struct SgdState {
    std::vector<Tensor> velocity;
    void init_like(const ModelParams& params);
};

// v <- momentum*v + g; p <- p - lr*v. Returns false (params untouched) when
// any gradient entry is non-finite.
bool sgd_step(ModelParams& params, const Grads& grads, SgdState& state, double lr,
              double momentum);

// t <- decay*t + (1-decay)*s, elementwise.
void ema_update(ModelParams& teacher, const ModelParams& student, double decay);

struct LrSchedule {
    double base_lr = 0.01;
    double power = 0.9;
    int64_t max_iter = 3000;
    // Literal reading of the published decay expression,
    // base*(1 - (iter/max_iter)^power), instead of the conventional
    // base*(1 - iter/max_iter)^power.
    bool literal_decay = false;
};

double poly_lr(int64_t iter, const LrSchedule& sched);

// Pixel-wise cross entropy against hard labels, mean over non-ignored
// pixels; dlogits is the fused softmax-CE gradient.
struct CeResult {
    double loss = 0.0;
    DMap dlogits;
};
CeResult softmax_ce_loss(const ProbabilityMap& prob, const LabelMap& target);

// Dual mean-teacher parameter sets. Teachers are EMA copies and are never
// seen by the optimizer; gen_teacher tracks gen_student and serves the
// professional module, pro_teacher tracks pro_student and serves the
// general module.
struct ModelQuartet {
    ModelParams gen_student, pro_student, gen_teacher, pro_teacher;
    SgdState gen_opt, pro_opt;
};

ModelQuartet init_quartet(const ModelDims& dims, Rng& gen_rng, Rng& pro_rng);

Tensor flatten_params(const ModelParams& params);
void unflatten_params(ModelParams& params, const Tensor& flat);
Tensor flatten_sgd(const SgdState& state);
void unflatten_sgd(SgdState& state, const Tensor& flat);

}  // namespace stpg
