#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "stpg/tensor.hpp"

namespace stpg {

// Label value excluded from every loss and metric.
inline constexpr uint8_t kIgnoreLabel = 255;

// Per-pixel input feature map, shape [W,H,F].
struct Image {
    Tensor data;
    std::string id;

    int width() const { return data.dim(0); }
    int height() const { return data.dim(1); }
    int channels() const { return data.dim(2); }
};

// Hard per-pixel class assignments, shape [W,H]. Entries are class ids in
// [0, C) or kIgnoreLabel.
struct LabelMap {
    int width = 0;
    int height = 0;
    std::vector<uint8_t> v;

    LabelMap() = default;
    LabelMap(int w, int h, uint8_t fill = 0)
        : width(w), height(h), v(static_cast<size_t>(w) * h, fill) {}

    uint8_t& at(int x, int y) { return v[static_cast<size_t>(x) * height + y]; }
    uint8_t at(int x, int y) const { return v[static_cast<size_t>(x) * height + y]; }

    friend bool operator==(const LabelMap& a, const LabelMap& b) {
        return a.width == b.width && a.height == b.height && a.v == b.v;
    }
};

// Per-pixel class distribution, shape [W,H,C]. Rows live on the simplex.
struct ProbabilityMap {
    Tensor data;

    int width() const { return data.dim(0); }
    int height() const { return data.dim(1); }
    int classes() const { return data.dim(2); }

    // Simplex check used by file loaders and debug assertions.
    bool valid(double tol = 1e-5) const;
};

// Hard one-hot partition member, shape [W,H,C]. A pixel's channel sum is 0
// or 1; the full pseudo-label map has sum exactly 1 everywhere, partition
// members may leave pixels inactive.
struct OneHotMap {
    int width = 0;
    int height = 0;
    int classes = 0;
    std::vector<uint8_t> v;

    OneHotMap() = default;
    OneHotMap(int w, int h, int c)
        : width(w), height(h), classes(c), v(static_cast<size_t>(w) * h * c, 0) {}

    uint8_t& at(int x, int y, int c) {
        return v[(static_cast<size_t>(x) * height + y) * classes + c];
    }
    uint8_t at(int x, int y, int c) const {
        return v[(static_cast<size_t>(x) * height + y) * classes + c];
    }

    int channel_sum(int x, int y) const {
        int s = 0;
        for (int c = 0; c < classes; ++c) s += at(x, y, c);
        return s;
    }

    // Active class id, or -1 when the pixel is not in this partition member.
    int active_class(int x, int y) const {
        for (int c = 0; c < classes; ++c)
            if (at(x, y, c)) return c;
        return -1;
    }

    int64_t count_active() const {
        int64_t n = 0;
        for (uint8_t b : v) n += b;
        return n;
    }

    friend bool operator==(const OneHotMap& a, const OneHotMap& b) {
        return a.width == b.width && a.height == b.height && a.classes == b.classes && a.v == b.v;
    }
};

// Per-pixel confidence weights in [0,1], zero where the paired selection
// mask excludes the pixel. Shape [W,H].
struct WeightMap {
    int width = 0;
    int height = 0;
    std::vector<float> v;

    WeightMap() = default;
    WeightMap(int w, int h, float fill = 0.0f)
        : width(w), height(h), v(static_cast<size_t>(w) * h, fill) {}

    float& at(int x, int y) { return v[static_cast<size_t>(x) * height + y]; }
    float at(int x, int y) const { return v[static_cast<size_t>(x) * height + y]; }
};

// Numerically stabilized per-pixel softmax over the channel axis.
// Throws std::invalid_argument on non-finite input.
ProbabilityMap softmax_channelwise(const Tensor& logits);

// Argmax one-hot conversion; ties go to the lowest class index.
OneHotMap one_hot(const ProbabilityMap& p);

// Per-pixel argmax as a label map (same tie-break rule as one_hot).
LabelMap argmax_map(const ProbabilityMap& p);

LabelMap to_label_map(const OneHotMap& m, uint8_t inactive = kIgnoreLabel);

}  // namespace stpg
