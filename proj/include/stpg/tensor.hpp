#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace stpg {

// Dense row-major float32 tensor. The last dimension is contiguous; maps
// follow the [W,H,C] convention used throughout, so at(x,y,c) walks the
// channel axis fastest. Rank is 1..4. Values are immutable once a map has
// been handed to another module; mutation happens only during construction.
class Tensor {
public:
    Tensor() = default;

    explicit Tensor(std::vector<int> shape) : shape_(std::move(shape)) {
        int64_t n = 1;
        for (int d : shape_) {
            if (d < 1) throw std::invalid_argument("Tensor: dimensions must be >= 1");
            n *= d;
        }
        v_.assign(static_cast<size_t>(n), 0.0f);
    }

    static Tensor zeros(std::vector<int> shape) { return Tensor(std::move(shape)); }

    static Tensor full(std::vector<int> shape, float value) {
        Tensor t(std::move(shape));
        std::fill(t.v_.begin(), t.v_.end(), value);
        return t;
    }

    int rank() const { return static_cast<int>(shape_.size()); }
    int dim(int i) const { return shape_[static_cast<size_t>(i)]; }
    const std::vector<int>& shape() const { return shape_; }
    int64_t size() const { return static_cast<int64_t>(v_.size()); }

    float* data() { return v_.data(); }
    const float* data() const { return v_.data(); }

    float& operator[](int64_t i) { return v_[static_cast<size_t>(i)]; }
    float operator[](int64_t i) const { return v_[static_cast<size_t>(i)]; }

    float& at(int x, int y) { return v_[static_cast<size_t>(x) * shape_[1] + y]; }
    float at(int x, int y) const { return v_[static_cast<size_t>(x) * shape_[1] + y]; }

    float& at(int x, int y, int c) {
        return v_[(static_cast<size_t>(x) * shape_[1] + y) * shape_[2] + c];
    }
    float at(int x, int y, int c) const {
        return v_[(static_cast<size_t>(x) * shape_[1] + y) * shape_[2] + c];
    }

    float& at(int a, int b, int c, int d) {
        return v_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }
    float at(int a, int b, int c, int d) const {
        return v_[((static_cast<size_t>(a) * shape_[1] + b) * shape_[2] + c) * shape_[3] + d];
    }

    void fill(float value) { std::fill(v_.begin(), v_.end(), value); }

    bool all_finite() const {
        for (float x : v_)
            if (!std::isfinite(x)) return false;
        return true;
    }

    float max_abs() const {
        float m = 0.0f;
        for (float x : v_) m = std::max(m, std::fabs(x));
        return m;
    }

    bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }

    friend bool bit_equal(const Tensor& a, const Tensor& b) {
        return a.shape_ == b.shape_ && a.v_ == b.v_;
    }

private:
    std::vector<int> shape_;
    std::vector<float> v_;
};

inline std::string shape_string(const std::vector<int>& shape) {
    std::string s = "[";
    for (size_t i = 0; i < shape.size(); ++i) {
        if (i) s += ",";
        s += std::to_string(shape[i]);
    }
    return s + "]";
}

}  // namespace stpg
