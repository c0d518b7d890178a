#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace sdkit {

using Shape = std::vector<int>;

inline std::int64_t shape_numel(const Shape& s) {
    std::int64_t n = 1;
    for (int d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::string out = "(";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) out += "x";
        out += std::to_string(s[i]);
    }
    out += ")";
    return out;
}

// Dense n-d float array, layout C x H x W per item with an optional leading
// batch dimension. Carries an optional gradient buffer of the same shape.
template <typename T>
struct TensorT {
    Shape shape;
    std::vector<T> data;
    std::vector<T> grad; // empty unless allocated

    TensorT() = default;
    explicit TensorT(Shape s, T fill = T(0))
        : shape(std::move(s)), data(static_cast<std::size_t>(shape_numel(shape)), fill) {
        for (int d : shape)
            if (d <= 0) throw std::invalid_argument("tensor dims must be positive, got " + shape_str(shape));
    }

    static TensorT zeros(Shape s) { return TensorT(std::move(s)); }
    static TensorT full(Shape s, T v) { return TensorT(std::move(s), v); }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }

    // CHW accessors for rank-3 tensors
    int channels() const { return shape.at(shape.size() - 3); }
    int height() const { return shape.at(shape.size() - 2); }
    int width() const { return shape.at(shape.size() - 1); }
    std::int64_t plane() const { return static_cast<std::int64_t>(height()) * width(); }

    T& at(int c, int y, int x) { return data[(static_cast<std::size_t>(c) * height() + y) * width() + x]; }
    const T& at(int c, int y, int x) const {
        return data[(static_cast<std::size_t>(c) * height() + y) * width() + x];
    }

    void alloc_grad() { grad.assign(data.size(), T(0)); }
    void zero_grad() {
        if (grad.size() != data.size()) grad.assign(data.size(), T(0));
        else std::fill(grad.begin(), grad.end(), T(0));
    }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }
};

using TensorF = TensorT<float>;
using TensorD = TensorT<double>;

// Binary per-pixel validity. Values are exactly 0 or 1; stored in the
// tensor scalar type so kernels can consume it as a multiplicative mask.
template <typename T>
struct ValidityMaskT {
    int h = 0, w = 0;
    std::vector<T> data;

    ValidityMaskT() = default;
    ValidityMaskT(int height, int width, T fill = T(0))
        : h(height), w(width), data(static_cast<std::size_t>(height) * width, fill) {
        if (height <= 0 || width <= 0)
            throw std::invalid_argument("mask dims must be positive");
        if (fill != T(0) && fill != T(1)) throw std::invalid_argument("mask values must be 0 or 1");
    }

    std::size_t numel() const { return data.size(); }
    T& at(int y, int x) { return data[static_cast<std::size_t>(y) * w + x]; }
    const T& at(int y, int x) const { return data[static_cast<std::size_t>(y) * w + x]; }

    double density() const {
        double s = 0;
        for (T v : data) s += static_cast<double>(v);
        return data.empty() ? 0.0 : s / static_cast<double>(data.size());
    }

    void validate() const {
        for (T v : data)
            if (v != T(0) && v != T(1))
                throw std::invalid_argument("validity mask holds a value outside {0,1}");
    }

    std::int64_t count() const {
        std::int64_t n = 0;
        for (T v : data) n += (v == T(1));
        return n;
    }
};

using ValidityMaskF = ValidityMaskT<float>;
using ValidityMaskD = ValidityMaskT<double>;

// Per-pixel depth in meters; 0 marks an invalid pixel. The mask is derived
// from the depth values and kept consistent with them.
template <typename T>
struct SparseDepthMapT {
    TensorT<T> depth;       // 1 x H x W
    ValidityMaskT<T> mask;  // H x W

    SparseDepthMapT() = default;

    static SparseDepthMapT from_depth(TensorT<T> d) {
        if (d.rank() != 3 || d.channels() != 1)
            throw std::invalid_argument("sparse depth map must be 1xHxW, got " + shape_str(d.shape));
        SparseDepthMapT out;
        out.mask = ValidityMaskT<T>(d.height(), d.width());
        for (std::size_t i = 0; i < d.data.size(); ++i) {
            if (d.data[i] < T(0))
                throw std::invalid_argument("sparse depth must be non-negative");
            out.mask.data[i] = d.data[i] > T(0) ? T(1) : T(0);
        }
        out.depth = std::move(d);
        return out;
    }

    int height() const { return depth.height(); }
    int width() const { return depth.width(); }
    double density() const { return mask.density(); }
};

using SparseDepthMapF = SparseDepthMapT<float>;
using SparseDepthMapD = SparseDepthMapT<double>;

} // namespace sdkit
