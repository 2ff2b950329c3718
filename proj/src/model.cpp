#include "stpg/model.hpp"

#include <cmath>
#include <stdexcept>

namespace stpg {
namespace {

Tensor he_uniform(std::vector<int> shape, int fan_in, Rng& rng) {
    Tensor t(std::move(shape));
    const double limit = std::sqrt(6.0 / fan_in);
    for (int64_t i = 0; i < t.size(); ++i)
        t[i] = static_cast<float>(rng.uniform(-limit, limit));
    return t;
}

}  // namespace

int64_t ModelParams::parameter_count() const {
    int64_t n = 0;
    for_each_tensor([&](const Tensor& t) { n += t.size(); });
    return n;
}

ModelParams init_params(const ModelDims& dims, Rng& rng) {
    ModelParams p;
    p.dims = dims;
    p.stem_w = he_uniform({dims.hidden_dim, 3, 3, dims.in_channels}, 9 * dims.in_channels, rng);
    p.stem_b = Tensor({dims.hidden_dim});
    p.seg_w = he_uniform({dims.num_classes, dims.hidden_dim}, dims.hidden_dim, rng);
    p.seg_b = Tensor({dims.num_classes});
    p.proj1_w = he_uniform({dims.hidden_dim, dims.hidden_dim}, dims.hidden_dim, rng);
    p.proj1_b = Tensor({dims.hidden_dim});
    p.proj2_w = he_uniform({dims.feat_dim, dims.hidden_dim}, dims.hidden_dim, rng);
    p.proj2_b = Tensor({dims.feat_dim});
    return p;
}

bool params_bit_equal(const ModelParams& a, const ModelParams& b) {
    if (!(a.dims == b.dims)) return false;
    bool eq = true;
    const Tensor* bt[8];
    int i = 0;
    b.for_each_tensor([&](const Tensor& t) { bt[i++] = &t; });
    i = 0;
    a.for_each_tensor([&](const Tensor& t) { eq = eq && bit_equal(t, *bt[i++]); });
    return eq;
}

ForwardResult forward(const ModelParams& params, const Image& img, const ForwardOptions& opts) {
    const ModelDims& d = params.dims;
    if (img.channels() != d.in_channels)
        throw std::invalid_argument("forward: image has " + std::to_string(img.channels()) +
                                    " channels, model expects " + std::to_string(d.in_channels));
    if (opts.dropout_p > 0.0 && opts.rng == nullptr)
        throw std::invalid_argument("forward: dropout requires an rng");

    const int w = img.width(), h = img.height();
    const int K = d.hidden_dim, F = d.in_channels, C = d.num_classes, D = d.feat_dim;

    ForwardResult r;
    r.cache.input = img.data;
    r.cache.pre_act = Tensor({w, h, K});
    r.cache.hidden = Tensor({w, h, K});
    r.cache.proj_pre = Tensor({w, h, K});
    r.cache.proj_mid = Tensor({w, h, K});
    r.logits = Tensor({w, h, C});
    r.features = Tensor({w, h, D});

    const float* in = img.data.data();
    const float* sw = params.stem_w.data();

    // stem: 3x3 conv, zero padding, accumulated in double
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            for (int k = 0; k < K; ++k) {
                double acc = params.stem_b[k];
                const float* wk = sw + static_cast<size_t>(k) * 9 * F;
                for (int dy = 0; dy < 3; ++dy) {
                    int yy = y + dy - 1;
                    if (yy < 0 || yy >= h) continue;
                    for (int dx = 0; dx < 3; ++dx) {
                        int xx = x + dx - 1;
                        if (xx < 0 || xx >= w) continue;
                        const float* px = in + (static_cast<size_t>(xx) * h + yy) * F;
                        const float* wp = wk + (static_cast<size_t>(dy) * 3 + dx) * F;
                        for (int f = 0; f < F; ++f) acc += static_cast<double>(wp[f]) * px[f];
                    }
                }
                float z = static_cast<float>(acc);
                r.cache.pre_act.at(x, y, k) = z;
                r.cache.hidden.at(x, y, k) = z > 0.0f ? z : 0.0f;
            }
        }
    }

    const bool use_dropout = opts.dropout_p > 0.0;
    if (use_dropout) r.cache.drop_mask = Tensor({w, h, K});
    const float keep_scale = use_dropout ? 1.0f / (1.0f - static_cast<float>(opts.dropout_p)) : 1.0f;

    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            const float* hd = r.cache.hidden.data() + (static_cast<size_t>(x) * h + y) * K;
            for (int c = 0; c < C; ++c) {
                double acc = params.seg_b[c];
                const float* wp = params.seg_w.data() + static_cast<size_t>(c) * K;
                for (int k = 0; k < K; ++k) acc += static_cast<double>(wp[k]) * hd[k];
                r.logits.at(x, y, c) = static_cast<float>(acc);
            }
            for (int j = 0; j < K; ++j) {
                double acc = params.proj1_b[j];
                const float* wp = params.proj1_w.data() + static_cast<size_t>(j) * K;
                for (int k = 0; k < K; ++k) acc += static_cast<double>(wp[k]) * hd[k];
                float z = static_cast<float>(acc);
                r.cache.proj_pre.at(x, y, j) = z;
                float a = z > 0.0f ? z : 0.0f;
                if (use_dropout) {
                    float m = opts.rng->uniform() < opts.dropout_p ? 0.0f : keep_scale;
                    r.cache.drop_mask.at(x, y, j) = m;
                    a *= m;
                }
                r.cache.proj_mid.at(x, y, j) = a;
            }
            const float* md = r.cache.proj_mid.data() + (static_cast<size_t>(x) * h + y) * K;
            for (int e = 0; e < D; ++e) {
                double acc = params.proj2_b[e];
                const float* wp = params.proj2_w.data() + static_cast<size_t>(e) * K;
                for (int k = 0; k < K; ++k) acc += static_cast<double>(wp[k]) * md[k];
                r.features.at(x, y, e) = static_cast<float>(acc);
            }
        }
    }
    return r;
}

void Grads::init_like(const ModelParams& params) {
    g.clear();
    params.for_each_tensor([&](const Tensor& t) {
        g.emplace_back(static_cast<size_t>(t.size()), 0.0);
    });
}

void Grads::add_scaled(const Grads& other, double scale) {
    for (size_t i = 0; i < g.size(); ++i)
        for (size_t j = 0; j < g[i].size(); ++j) g[i][j] += scale * other.g[i][j];
}

void Grads::scale(double s) {
    for (auto& t : g)
        for (auto& x : t) x *= s;
}

bool Grads::all_finite() const {
    for (const auto& t : g)
        for (double x : t)
            if (!std::isfinite(x)) return false;
    return true;
}

double Grads::max_abs() const {
    double m = 0.0;
    for (const auto& t : g)
        for (double x : t) m = std::max(m, std::fabs(x));
    return m;
}

void backward(const ModelParams& params, const ForwardCache& cache, const DMap& dlogits,
              const DMap& dfeatures, Grads& out) {
    const ModelDims& d = params.dims;
    const int w = cache.input.dim(0), h = cache.input.dim(1);
    const int K = d.hidden_dim, F = d.in_channels, C = d.num_classes, D = d.feat_dim;
    if (out.g.empty()) out.init_like(params);

    std::vector<double>& g_stem_w = out.g[0];
    std::vector<double>& g_stem_b = out.g[1];
    std::vector<double>& g_seg_w = out.g[2];
    std::vector<double>& g_seg_b = out.g[3];
    std::vector<double>& g_proj1_w = out.g[4];
    std::vector<double>& g_proj1_b = out.g[5];
    std::vector<double>& g_proj2_w = out.g[6];
    std::vector<double>& g_proj2_b = out.g[7];

    const bool has_logits = !dlogits.empty();
    const bool has_feat = !dfeatures.empty();
    const bool use_dropout = cache.drop_mask.size() > 0;

    std::vector<double> dhidden(static_cast<size_t>(K));
    std::vector<double> dmid(static_cast<size_t>(K));

    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            std::fill(dhidden.begin(), dhidden.end(), 0.0);
            const float* hd = cache.hidden.data() + (static_cast<size_t>(x) * h + y) * K;

            if (has_logits) {
                for (int c = 0; c < C; ++c) {
                    double dv = dlogits.at(x, y, c);
                    if (dv == 0.0) continue;
                    double* gw = g_seg_w.data() + static_cast<size_t>(c) * K;
                    const float* wp = params.seg_w.data() + static_cast<size_t>(c) * K;
                    for (int k = 0; k < K; ++k) {
                        gw[k] += dv * hd[k];
                        dhidden[static_cast<size_t>(k)] += dv * wp[k];
                    }
                    g_seg_b[static_cast<size_t>(c)] += dv;
                }
            }

            if (has_feat) {
                std::fill(dmid.begin(), dmid.end(), 0.0);
                const float* md = cache.proj_mid.data() + (static_cast<size_t>(x) * h + y) * K;
                for (int e = 0; e < D; ++e) {
                    double dv = dfeatures.at(x, y, e);
                    if (dv == 0.0) continue;
                    double* gw = g_proj2_w.data() + static_cast<size_t>(e) * K;
                    const float* wp = params.proj2_w.data() + static_cast<size_t>(e) * K;
                    for (int k = 0; k < K; ++k) {
                        gw[k] += dv * md[k];
                        dmid[static_cast<size_t>(k)] += dv * wp[k];
                    }
                    g_proj2_b[static_cast<size_t>(e)] += dv;
                }
                for (int j = 0; j < K; ++j) {
                    double dv = dmid[static_cast<size_t>(j)];
                    if (dv == 0.0) continue;
                    if (use_dropout) dv *= cache.drop_mask.at(x, y, j);
                    if (cache.proj_pre.at(x, y, j) <= 0.0f) continue;
                    double* gw = g_proj1_w.data() + static_cast<size_t>(j) * K;
                    const float* wp = params.proj1_w.data() + static_cast<size_t>(j) * K;
                    for (int k = 0; k < K; ++k) {
                        gw[k] += dv * hd[k];
                        dhidden[static_cast<size_t>(k)] += dv * wp[k];
                    }
                    g_proj1_b[static_cast<size_t>(j)] += dv;
                }
            }

            // through stem ReLU into the conv
            const float* in = cache.input.data();
            for (int k = 0; k < K; ++k) {
                double dv = dhidden[static_cast<size_t>(k)];
                if (dv == 0.0 || cache.pre_act.at(x, y, k) <= 0.0f) continue;
                g_stem_b[static_cast<size_t>(k)] += dv;
                double* gw = g_stem_w.data() + static_cast<size_t>(k) * 9 * F;
                for (int dy = 0; dy < 3; ++dy) {
                    int yy = y + dy - 1;
                    if (yy < 0 || yy >= h) continue;
                    for (int dx = 0; dx < 3; ++dx) {
                        int xx = x + dx - 1;
                        if (xx < 0 || xx >= w) continue;
                        const float* px = in + (static_cast<size_t>(xx) * h + yy) * F;
                        double* gp = gw + (static_cast<size_t>(dy) * 3 + dx) * F;
                        for (int f = 0; f < F; ++f) gp[f] += dv * px[f];
                    }
                }
            }
        }
    }
}

void SgdState::init_like(const ModelParams& params) {
    velocity.clear();
    params.for_each_tensor([&](const Tensor& t) { velocity.emplace_back(t.shape()); });
}

bool sgd_step(ModelParams& params, const Grads& grads, SgdState& state, double lr,
              double momentum) {
    if (!grads.all_finite()) return false;
    size_t i = 0;
    params.for_each_tensor([&](Tensor& t) {
        Tensor& v = state.velocity[i];
        const std::vector<double>& g = grads.g[i];
        for (int64_t j = 0; j < t.size(); ++j) {
            float vel = static_cast<float>(momentum * v[j] + g[static_cast<size_t>(j)]);
            v[j] = vel;
            t[j] = static_cast<float>(t[j] - lr * vel);
        }
        ++i;
    });
    return true;
}

void ema_update(ModelParams& teacher, const ModelParams& student, double decay) {
    const Tensor* st[8];
    int i = 0;
    student.for_each_tensor([&](const Tensor& t) { st[i++] = &t; });
    i = 0;
    teacher.for_each_tensor([&](Tensor& t) {
        const Tensor& s = *st[i++];
        for (int64_t j = 0; j < t.size(); ++j)
            t[j] = static_cast<float>(decay * t[j] + (1.0 - decay) * s[j]);
    });
}

double poly_lr(int64_t iter, const LrSchedule& sched) {
    if (iter < 0) throw std::invalid_argument("poly_lr: negative iteration");
    if (iter >= sched.max_iter) return 0.0;
    double frac = static_cast<double>(iter) / static_cast<double>(sched.max_iter);
    if (sched.literal_decay) return sched.base_lr * (1.0 - std::pow(frac, sched.power));
    return sched.base_lr * std::pow(1.0 - frac, sched.power);
}

CeResult softmax_ce_loss(const ProbabilityMap& prob, const LabelMap& target) {
    const int w = prob.width(), h = prob.height(), c = prob.classes();
    if (target.width != w || target.height != h)
        throw std::invalid_argument("softmax_ce_loss: prob/target shape mismatch");

    CeResult r;
    r.dlogits = DMap(w, h, c);
    int64_t n_valid = 0;
    for (int x = 0; x < w; ++x)
        for (int y = 0; y < h; ++y)
            if (target.at(x, y) != kIgnoreLabel) ++n_valid;
    if (n_valid == 0) return r;

    const double inv_n = 1.0 / static_cast<double>(n_valid);
    double loss = 0.0;
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) {
            uint8_t t = target.at(x, y);
            if (t == kIgnoreLabel) continue;
            double p = std::max(static_cast<double>(prob.data.at(x, y, t)), 1e-30);
            loss -= std::log(p);
            for (int k = 0; k < c; ++k) {
                double grad = static_cast<double>(prob.data.at(x, y, k)) - (k == t ? 1.0 : 0.0);
                r.dlogits.at(x, y, k) = grad * inv_n;
            }
        }
    }
    r.loss = loss * inv_n;
    return r;
}

ModelQuartet init_quartet(const ModelDims& dims, Rng& gen_rng, Rng& pro_rng) {
    ModelQuartet q;
    q.gen_student = init_params(dims, gen_rng);
    q.pro_student = init_params(dims, pro_rng);
    if (params_bit_equal(q.gen_student, q.pro_student))
        throw std::runtime_error("init_quartet: student initializations must differ");
    q.gen_teacher = q.gen_student;
    q.pro_teacher = q.pro_student;
    q.gen_opt.init_like(q.gen_student);
    q.pro_opt.init_like(q.pro_student);
    return q;
}

Tensor flatten_params(const ModelParams& params) {
    Tensor flat({static_cast<int>(params.parameter_count())});
    int64_t o = 0;
    params.for_each_tensor([&](const Tensor& t) {
        for (int64_t j = 0; j < t.size(); ++j) flat[o++] = t[j];
    });
    return flat;
}

void unflatten_params(ModelParams& params, const Tensor& flat) {
    if (flat.size() != params.parameter_count())
        throw std::invalid_argument("unflatten_params: size mismatch");
    int64_t o = 0;
    params.for_each_tensor([&](Tensor& t) {
        for (int64_t j = 0; j < t.size(); ++j) t[j] = flat[o++];
    });
}

Tensor flatten_sgd(const SgdState& state) {
    int64_t n = 0;
    for (const Tensor& t : state.velocity) n += t.size();
    Tensor flat({static_cast<int>(n)});
    int64_t o = 0;
    for (const Tensor& t : state.velocity)
        for (int64_t j = 0; j < t.size(); ++j) flat[o++] = t[j];
    return flat;
}

void unflatten_sgd(SgdState& state, const Tensor& flat) {
    int64_t n = 0;
    for (const Tensor& t : state.velocity) n += t.size();
    if (flat.size() != n) throw std::invalid_argument("unflatten_sgd: size mismatch");
    int64_t o = 0;
    for (Tensor& t : state.velocity)
        for (int64_t j = 0; j < t.size(); ++j) t[j] = flat[o++];
}

}  // namespace stpg
