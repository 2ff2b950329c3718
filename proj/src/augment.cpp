#include "stpg/augment.hpp"

#include <cmath>
#include <stdexcept>

namespace stpg {
namespace {

// Source pixel for destination (x,y) under flip-then-translate, or (-1,-1)
// when it falls outside the image (padding).
inline std::pair<int, int> source_pixel(int x, int y, int w, int h, const AugRecord& rec) {
    int sx = x - rec.off_x;
    int sy = y - rec.off_y;
    if (sx < 0 || sx >= w || sy < 0 || sy >= h) return {-1, -1};
    if (rec.flip) sx = w - 1 - sx;
    return {sx, sy};
}

}  // namespace

std::pair<Image, AugRecord> weak_augment(const Image& img, const WeakParams& params, Rng& rng) {
    AugRecord rec;
    rec.flip = rng.bernoulli(params.flip_prob);
    if (params.pad > 0) {
        rec.off_x = rng.uniform_int(2 * params.pad + 1) - params.pad;
        rec.off_y = rng.uniform_int(2 * params.pad + 1) - params.pad;
    }
    return {apply_weak(img, rec), rec};
}

Image apply_weak(const Image& img, const AugRecord& rec) {
    const int w = img.width(), h = img.height(), f = img.channels();
    Image out{Tensor({w, h, f}), img.id};
    for (int x = 0; x < w; ++x)
        for (int y = 0; y < h; ++y) {
            auto [sx, sy] = source_pixel(x, y, w, h, rec);
            if (sx < 0) continue;  // zero padding
            for (int k = 0; k < f; ++k) out.data.at(x, y, k) = img.data.at(sx, sy, k);
        }
    return out;
}

LabelMap apply_weak(const LabelMap& labels, const AugRecord& rec) {
    LabelMap out(labels.width, labels.height, kIgnoreLabel);
    for (int x = 0; x < labels.width; ++x)
        for (int y = 0; y < labels.height; ++y) {
            auto [sx, sy] = source_pixel(x, y, labels.width, labels.height, rec);
            if (sx >= 0) out.at(x, y) = labels.at(sx, sy);
        }
    return out;
}

std::vector<Rect> sample_cutmix_rects(int width, int height, const StrongParams& params, Rng& rng) {
    std::vector<Rect> rects;
    const double area = static_cast<double>(width) * height;
    for (int i = 0; i < params.rect_count; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < 100 && !placed; ++attempt) {
            double ratio = rng.uniform(params.area_ratio_min, params.area_ratio_max);
            double aspect = rng.uniform(params.aspect_min, params.aspect_max);
            int rw = static_cast<int>(std::lround(std::sqrt(ratio * area * aspect)));
            int rh = static_cast<int>(std::lround(std::sqrt(ratio * area / aspect)));
            if (rw < 1 || rh < 1 || rw > width || rh > height) continue;
            double actual = static_cast<double>(rw) * rh / area;
            if (actual < params.area_ratio_min || actual > params.area_ratio_max) continue;
            Rect r;
            r.w = rw;
            r.h = rh;
            r.x = rng.uniform_int(width - rw + 1);
            r.y = rng.uniform_int(height - rh + 1);
            rects.push_back(r);
            placed = true;
        }
        if (!placed)
            throw std::runtime_error("sample_cutmix_rects: no valid rectangle after 100 tries for " +
                                     std::to_string(width) + "x" + std::to_string(height));
    }
    return rects;
}

namespace {

template <typename Map, typename CopyPixel>
Map paste_impl(const Map& base, const std::vector<Rect>& rects, CopyPixel copy) {
    Map out = base;
    for (const Rect& r : rects)
        for (int x = r.x; x < r.x + r.w; ++x)
            for (int y = r.y; y < r.y + r.h; ++y) copy(out, x, y);
    return out;
}

}  // namespace

Image paste_rects(const Image& base, const Image& source, const std::vector<Rect>& rects) {
    if (!base.data.same_shape(source.data))
        throw std::invalid_argument("paste_rects: base and source shapes differ");
    const int f = base.channels();
    return paste_impl(base, rects, [&](Image& out, int x, int y) {
        for (int k = 0; k < f; ++k) out.data.at(x, y, k) = source.data.at(x, y, k);
    });
}

ProbabilityMap paste_rects(const ProbabilityMap& base, const ProbabilityMap& source,
                           const std::vector<Rect>& rects) {
    if (!base.data.same_shape(source.data))
        throw std::invalid_argument("paste_rects: base and source shapes differ");
    const int c = base.classes();
    return paste_impl(base, rects, [&](ProbabilityMap& out, int x, int y) {
        for (int k = 0; k < c; ++k) out.data.at(x, y, k) = source.data.at(x, y, k);
    });
}

LabelMap paste_rects(const LabelMap& base, const LabelMap& source, const std::vector<Rect>& rects) {
    if (base.width != source.width || base.height != source.height)
        throw std::invalid_argument("paste_rects: base and source shapes differ");
    return paste_impl(base, rects,
                      [&](LabelMap& out, int x, int y) { out.at(x, y) = source.at(x, y); });
}

Image feature_jitter(const Image& img, double jitter_std, Rng& rng) {
    Image out = img;
    if (jitter_std <= 0.0) return out;
    double sq = 0.0;
    for (int64_t i = 0; i < img.data.size(); ++i)
        sq += static_cast<double>(img.data[i]) * img.data[i];
    double rms = std::sqrt(sq / static_cast<double>(img.data.size()));
    double std_abs = jitter_std * rms;
    for (int64_t i = 0; i < out.data.size(); ++i)
        out.data[i] += static_cast<float>(std_abs * rng.normal());
    return out;
}

std::pair<Image, AugRecord> strong_augment(const Image& img, const Image& mix_source,
                                           const StrongParams& params, Rng& rng) {
    if (!img.data.same_shape(mix_source.data))
        throw std::invalid_argument("strong_augment: img and mix_source shapes differ");
    auto [weak_img, rec] = weak_augment(img, params.weak, rng);
    Image weak_mix = apply_weak(mix_source, rec);
    rec.rects = sample_cutmix_rects(img.width(), img.height(), params, rng);
    Image mixed = paste_rects(weak_img, weak_mix, rec.rects);
    return {feature_jitter(mixed, params.jitter_std, rng), rec};
}

}  // namespace stpg
