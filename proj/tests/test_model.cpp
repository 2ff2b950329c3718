#include <cmath>

#include "doctest.h"
#include "grad_check.hpp"

#include "stpg/model.hpp"

using namespace stpg;

namespace {

Image random_image(int w, int h, int f, Rng& rng) {
    Image img{Tensor({w, h, f}), "img"};
    for (int64_t i = 0; i < img.data.size(); ++i)
        img.data[i] = static_cast<float>(rng.uniform(-1.0, 1.0));
    return img;
}

LabelMap random_labels(int w, int h, int c, Rng& rng) {
    LabelMap m(w, h);
    for (auto& v : m.v) v = static_cast<uint8_t>(rng.uniform_int(c));
    return m;
}

constexpr ModelDims kTinyDims{3, 4, 3, 4};

}  // namespace

TEST_SUITE_BEGIN("model");

TEST_CASE("zero parameters give a uniform probability map") {
    ModelParams p;
    p.dims = kTinyDims;
    p.stem_w = Tensor({4, 3, 3, 3});
    p.stem_b = Tensor({4});
    p.seg_w = Tensor({3, 4});
    p.seg_b = Tensor({3});
    p.proj1_w = Tensor({4, 4});
    p.proj1_b = Tensor({4});
    p.proj2_w = Tensor({4, 4});
    p.proj2_b = Tensor({4});

    Rng rng(1);
    Image img = random_image(5, 5, 3, rng);
    ForwardResult fr = forward(p, img);
    ProbabilityMap prob = softmax_channelwise(fr.logits);
    for (int x = 0; x < 5; ++x)
        for (int y = 0; y < 5; ++y)
            for (int c = 0; c < 3; ++c)
                CHECK(prob.data.at(x, y, c) == doctest::Approx(1.0 / 3.0).epsilon(1e-6));
}

TEST_CASE("doubling seg-head weights rescales logits but keeps the argmax") {
    Rng rng(2);
    ModelParams p = init_params(kTinyDims, rng);
    p.seg_b.fill(0.0f);
    Image img = random_image(6, 6, 3, rng);

    ForwardResult base = forward(p, img);
    for (int64_t i = 0; i < p.seg_w.size(); ++i) p.seg_w[i] *= 2.0f;
    ForwardResult doubled = forward(p, img);

    LabelMap a = argmax_map(softmax_channelwise(base.logits));
    LabelMap b = argmax_map(softmax_channelwise(doubled.logits));
    CHECK(a == b);
    CHECK_FALSE(bit_equal(base.logits, doubled.logits));
}

TEST_CASE("supervised CE gradient matches central differences on 4x4 instances") {
    Rng rng(3);
    for (int trial = 0; trial < 5; ++trial) {
        ModelParams p = init_params(kTinyDims, rng);
        Image img = random_image(4, 4, 3, rng);
        LabelMap labels = random_labels(4, 4, 3, rng);

        ForwardResult fr = forward(p, img);
        CeResult ce = softmax_ce_loss(softmax_channelwise(fr.logits), labels);
        Grads grads;
        grads.init_like(p);
        backward(p, fr.cache, ce.dlogits, DMap(), grads);

        auto loss = [&]() {
            ForwardResult f = forward(p, img);
            return softmax_ce_loss(softmax_channelwise(f.logits), labels).loss;
        };
        auto check = testing::finite_difference_check(p, grads, loss, 1e-3);
        CHECK(check.relative_error() < 1e-3);
    }
}

TEST_CASE("gradients flow through the projection head (feature-side backward)") {
    Rng rng(4);
    ModelParams p = init_params(kTinyDims, rng);
    Image img = random_image(4, 4, 3, rng);

    // synthetic feature loss: sum of squares of projection outputs
    auto loss = [&]() {
        ForwardResult f = forward(p, img);
        double s = 0.0;
        for (int64_t i = 0; i < f.features.size(); ++i)
            s += 0.5 * static_cast<double>(f.features[i]) * f.features[i];
        return s;
    };
    ForwardResult fr = forward(p, img);
    DMap dfeat(4, 4, 4);
    for (int x = 0; x < 4; ++x)
        for (int y = 0; y < 4; ++y)
            for (int d = 0; d < 4; ++d) dfeat.at(x, y, d) = fr.features.at(x, y, d);
    Grads grads;
    grads.init_like(p);
    backward(p, fr.cache, DMap(), dfeat, grads);

    auto check = testing::finite_difference_check(p, grads, loss, 1e-3);
    CHECK(check.relative_error() < 1e-3);
}

TEST_CASE("sgd: zero gradient leaves parameters unchanged") {
    Rng rng(5);
    ModelParams p = init_params(kTinyDims, rng);
    ModelParams before = p;
    SgdState opt;
    opt.init_like(p);
    Grads g;
    g.init_like(p);
    CHECK(sgd_step(p, g, opt, 0.1, 0.9));
    CHECK(params_bit_equal(p, before));
}

TEST_CASE("sgd: first step is p - lr*g; second adds the momentum recurrence") {
    Rng rng(6);
    ModelParams p = init_params(kTinyDims, rng);
    float p0 = p.stem_w[0];
    SgdState opt;
    opt.init_like(p);
    Grads g;
    g.init_like(p);
    g.g[0][0] = 2.0;

    sgd_step(p, g, opt, 0.25, 0.9);
    CHECK(p.stem_w[0] == doctest::Approx(p0 - 0.25 * 2.0).epsilon(1e-7));

    sgd_step(p, g, opt, 0.25, 0.9);
    // v2 = 0.9*g + g = 1.9*g, total displacement lr*(g + 1.9 g)
    CHECK(p.stem_w[0] == doctest::Approx(p0 - 0.25 * (2.0 + 1.9 * 2.0)).epsilon(1e-6));
}

TEST_CASE("sgd: non-finite gradient skips the step") {
    Rng rng(7);
    ModelParams p = init_params(kTinyDims, rng);
    ModelParams before = p;
    SgdState opt;
    opt.init_like(p);
    Grads g;
    g.init_like(p);
    g.g[2][1] = std::numeric_limits<double>::quiet_NaN();
    CHECK_FALSE(sgd_step(p, g, opt, 0.1, 0.9));
    CHECK(params_bit_equal(p, before));
}

TEST_CASE("poly lr: endpoints and midpoint") {
    LrSchedule sched{0.01, 0.9, 1000, false};
    CHECK(poly_lr(0, sched) == doctest::Approx(0.01));
    CHECK(poly_lr(1000, sched) == doctest::Approx(0.0));
    CHECK(poly_lr(2000, sched) == doctest::Approx(0.0));  // clamp past max_iter
    CHECK(poly_lr(500, sched) == doctest::Approx(0.01 * std::pow(0.5, 0.9)).epsilon(1e-12));
    CHECK(poly_lr(500, sched) == doctest::Approx(0.0053588673).epsilon(1e-6));

    // monotone non-increasing
    double prev = poly_lr(0, sched);
    for (int64_t i = 1; i <= 1000; ++i) {
        double cur = poly_lr(i, sched);
        REQUIRE(cur <= prev);
        prev = cur;
    }
}

TEST_CASE("poly lr: literal decay reading behind the flag") {
    LrSchedule sched{0.01, 0.9, 1000, true};
    CHECK(poly_lr(0, sched) == doctest::Approx(0.01));
    CHECK(poly_lr(1000, sched) == doctest::Approx(0.0));
    CHECK(poly_lr(500, sched) == doctest::Approx(0.01 * (1.0 - std::pow(0.5, 0.9))).epsilon(1e-12));
}

TEST_CASE("ema: decay 0 copies the student, decay 1 freezes the teacher") {
    Rng rng(8);
    ModelParams teacher = init_params(kTinyDims, rng);
    ModelParams student = init_params(kTinyDims, rng);

    ModelParams t0 = teacher;
    ema_update(teacher, student, 1.0);
    CHECK(params_bit_equal(teacher, t0));

    ema_update(teacher, student, 0.0);
    CHECK(params_bit_equal(teacher, student));
}

TEST_CASE("ema: scalar blend matches 0.99*t + 0.01*s") {
    ModelParams teacher, student;
    teacher.dims = student.dims = kTinyDims;
    teacher.stem_w = Tensor({4, 3, 3, 3});
    student.stem_w = Tensor::full({4, 3, 3, 3}, 1.0f);
    auto init_rest = [](ModelParams& m) {
        m.stem_b = Tensor({4});
        m.seg_w = Tensor({3, 4});
        m.seg_b = Tensor({3});
        m.proj1_w = Tensor({4, 4});
        m.proj1_b = Tensor({4});
        m.proj2_w = Tensor({4, 4});
        m.proj2_b = Tensor({4});
    };
    init_rest(teacher);
    init_rest(student);
    ema_update(teacher, student, 0.99);
    CHECK(teacher.stem_w[0] == doctest::Approx(0.01).epsilon(1e-7));
}

TEST_CASE("ema converges geometrically to a constant student") {
    Rng rng(9);
    ModelParams teacher = init_params(kTinyDims, rng);
    ModelParams student;  // all zeros, dyadic decay keeps the norm exact
    student.dims = kTinyDims;
    student.stem_w = Tensor({4, 3, 3, 3});
    student.stem_b = Tensor({4});
    student.seg_w = Tensor({3, 4});
    student.seg_b = Tensor({3});
    student.proj1_w = Tensor({4, 4});
    student.proj1_b = Tensor({4});
    student.proj2_w = Tensor({4, 4});
    student.proj2_b = Tensor({4});

    double initial = 0.0;
    teacher.for_each_tensor([&](const Tensor& t) {
        for (int64_t i = 0; i < t.size(); ++i) initial += static_cast<double>(t[i]) * t[i];
    });
    initial = std::sqrt(initial);

    for (int k = 1; k <= 8; ++k) {
        ema_update(teacher, student, 0.5);
        double norm = 0.0;
        teacher.for_each_tensor([&](const Tensor& t) {
            for (int64_t i = 0; i < t.size(); ++i) norm += static_cast<double>(t[i]) * t[i];
        });
        norm = std::sqrt(norm);
        REQUIRE(norm == doctest::Approx(initial * std::pow(0.5, k)).epsilon(1e-6));
    }
}

TEST_CASE("quartet: students differ, teachers start as copies, optimizer never touches teachers") {
    Rng gen_rng(10), pro_rng(11);
    ModelQuartet q = init_quartet(kTinyDims, gen_rng, pro_rng);
    CHECK_FALSE(params_bit_equal(q.gen_student, q.pro_student));
    CHECK(params_bit_equal(q.gen_teacher, q.gen_student));
    CHECK(params_bit_equal(q.pro_teacher, q.pro_student));

    ModelParams gen_teacher_before = q.gen_teacher;
    ModelParams pro_teacher_before = q.pro_teacher;
    Grads g;
    g.init_like(q.gen_student);
    for (auto& t : g.g)
        for (auto& x : t) x = 0.5;
    sgd_step(q.gen_student, g, q.gen_opt, 0.1, 0.9);
    sgd_step(q.pro_student, g, q.pro_opt, 0.1, 0.9);
    CHECK(params_bit_equal(q.gen_teacher, gen_teacher_before));
    CHECK(params_bit_equal(q.pro_teacher, pro_teacher_before));
    CHECK_FALSE(params_bit_equal(q.gen_student, q.gen_teacher));
}

TEST_CASE("forward: shape mismatch raises") {
    Rng rng(12);
    ModelParams p = init_params(kTinyDims, rng);
    Image bad = random_image(4, 4, 5, rng);
    CHECK_THROWS_AS(forward(p, bad), std::invalid_argument);
}

TEST_CASE("dropout: flag on perturbs the projection path deterministically") {
    Rng rng(13);
    ModelParams p = init_params(kTinyDims, rng);
    Image img = random_image(6, 6, 3, rng);

    Rng d1(99), d2(99);
    ForwardOptions o1{0.1, &d1}, o2{0.1, &d2};
    ForwardResult a = forward(p, img, o1);
    ForwardResult b = forward(p, img, o2);
    CHECK(bit_equal(a.features, b.features));
    ForwardResult plain = forward(p, img);
    CHECK_FALSE(bit_equal(a.features, plain.features));
    // seg path is unaffected by projection dropout
    CHECK(bit_equal(a.logits, plain.logits));
}

TEST_SUITE_END();
