#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <numeric>
#include <sstream>
#include <stdexcept>
#include <string>
#include <type_traits>
#include <vector>

namespace steer {

using Shape = std::vector<std::size_t>;

inline std::size_t shape_numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t e : s) n *= e;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

/// Dense n-dimensional array, row-major, shape {} is a scalar.
template <typename T>
struct Tensor {
    static_assert(std::is_same_v<T, float> || std::is_same_v<T, double>,
                  "Tensor supports single or double precision");

    Shape shape;
    std::vector<T> data;

    Tensor() : shape{}, data(1, T(0)) {}
    explicit Tensor(Shape s) : shape(std::move(s)), data(shape_numel(shape), T(0)) {}
    Tensor(Shape s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (data.size() != shape_numel(shape))
            throw std::invalid_argument("tensor data length " + std::to_string(data.size()) +
                                        " does not match shape " + shape_str(shape));
    }

    static Tensor zeros(Shape s) { return Tensor(std::move(s)); }
    static Tensor full(Shape s, T v) {
        Tensor t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static Tensor scalar(T v) {
        Tensor t;
        t.data[0] = v;
        return t;
    }

    std::size_t numel() const { return data.size(); }
    std::size_t rank() const { return shape.size(); }
    bool is_scalar() const { return shape.empty(); }

    std::vector<std::size_t> strides() const {
        std::vector<std::size_t> st(shape.size(), 1);
        for (std::size_t i = shape.size(); i-- > 1;) st[i - 1] = st[i] * shape[i];
        return st;
    }

    T& operator[](std::size_t i) { return data[i]; }
    const T& operator[](std::size_t i) const { return data[i]; }

    T& at(std::initializer_list<std::size_t> idx) { return data[flat_index(idx)]; }
    const T& at(std::initializer_list<std::size_t> idx) const { return data[flat_index(idx)]; }

    std::size_t flat_index(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != shape.size())
            throw std::invalid_argument("index rank " + std::to_string(idx.size()) +
                                        " does not match tensor rank " + std::to_string(shape.size()));
        std::size_t flat = 0, axis = 0;
        for (std::size_t i : idx) {
            if (i >= shape[axis])
                throw std::out_of_range("index " + std::to_string(i) + " out of range for axis " +
                                        std::to_string(axis) + " of " + shape_str(shape));
            flat = flat * shape[axis] + i;
            ++axis;
        }
        return flat;
    }

    bool same_shape(const Tensor& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(v)) return false;
        return true;
    }

    Tensor reshaped(Shape s) const {
        if (shape_numel(s) != numel())
            throw std::invalid_argument("cannot reshape " + shape_str(shape) + " to " + shape_str(s) +
                                        ": element counts differ");
        return Tensor(std::move(s), data);
    }

    template <typename U>
    Tensor<U> cast() const {
        Tensor<U> out;
        out.shape = shape;
        out.data.assign(data.begin(), data.end());
        return out;
    }
};

using TensorF = Tensor<float>;
using TensorD = Tensor<double>;

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

enum class Unary { Relu, Tanh, Negate, Sigmoid, Scale };

template <typename T>
inline T stable_sigmoid(T x) {
    if (x >= T(0)) {
        return T(1) / (T(1) + std::exp(-x));
    }
    const T e = std::exp(x);
    return e / (T(1) + e);
}

template <typename T>
Tensor<T> map_unary(const Tensor<T>& t, Unary f, T alpha = T(1)) {
    Tensor<T> out = t;
    switch (f) {
        case Unary::Relu:
            for (T& v : out.data) v = v > T(0) ? v : T(0);
            break;
        case Unary::Tanh:
            for (T& v : out.data) v = std::tanh(v);
            break;
        case Unary::Negate:
            for (T& v : out.data) v = -v;
            break;
        case Unary::Sigmoid:
            for (T& v : out.data) v = stable_sigmoid(v);
            break;
        case Unary::Scale:
            for (T& v : out.data) v *= alpha;
            break;
    }
    return out;
}

// ---------------------------------------------------------------------------
// matmul
// ---------------------------------------------------------------------------

template <typename T>
Tensor<T> matmul(const Tensor<T>& a, const Tensor<T>& b) {
    if (a.rank() != 2 || b.rank() != 2)
        throw std::invalid_argument("matmul expects rank-2 operands, got " + shape_str(a.shape) +
                                    " and " + shape_str(b.shape));
    if (a.shape[1] != b.shape[0])
        throw std::invalid_argument("matmul inner extents differ: " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
    const std::size_t m = a.shape[0], k = a.shape[1], n = b.shape[1];
    Tensor<T> c({m, n});
    for (std::size_t i = 0; i < m; ++i) {
        const T* arow = a.data.data() + i * k;
        T* crow = c.data.data() + i * n;
        for (std::size_t p = 0; p < k; ++p) {
            const T av = arow[p];
            if (av == T(0)) continue;
            const T* brow = b.data.data() + p * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
    return c;
}

// ---------------------------------------------------------------------------
// pad / crop
// ---------------------------------------------------------------------------

/// Per-axis leading/trailing amount for pad_crop.
struct AxisAmount {
    std::size_t lead = 0;
    std::size_t trail = 0;
};

enum class PadMode { ZeroPad, Crop };

template <typename T>
Tensor<T> pad_crop(const Tensor<T>& t, const std::vector<AxisAmount>& amounts, PadMode mode) {
    if (amounts.size() != t.rank())
        throw std::invalid_argument("pad_crop expects one amount per axis (" +
                                    std::to_string(t.rank()) + "), got " +
                                    std::to_string(amounts.size()));
    Shape out_shape(t.rank());
    for (std::size_t ax = 0; ax < t.rank(); ++ax) {
        const auto& am = amounts[ax];
        if (mode == PadMode::ZeroPad) {
            out_shape[ax] = t.shape[ax] + am.lead + am.trail;
        } else {
            if (am.lead + am.trail > t.shape[ax])
                throw std::invalid_argument("crop of " + std::to_string(am.lead) + "+" +
                                            std::to_string(am.trail) + " exceeds extent " +
                                            std::to_string(t.shape[ax]) + " on axis " +
                                            std::to_string(ax));
            out_shape[ax] = t.shape[ax] - am.lead - am.trail;
        }
    }
    Tensor<T> out(out_shape);
    if (out.numel() == 0 || t.numel() == 0) return out;

    // Walk output indices; map to input where defined.
    std::vector<std::size_t> idx(t.rank(), 0);
    const auto in_strides = t.strides();
    const std::size_t rank = t.rank();
    for (std::size_t flat = 0; flat < out.numel(); ++flat) {
        bool inside = true;
        std::size_t in_flat = 0;
        for (std::size_t ax = 0; ax < rank; ++ax) {
            std::ptrdiff_t src = (mode == PadMode::ZeroPad)
                                     ? std::ptrdiff_t(idx[ax]) - std::ptrdiff_t(amounts[ax].lead)
                                     : std::ptrdiff_t(idx[ax]) + std::ptrdiff_t(amounts[ax].lead);
            if (src < 0 || src >= std::ptrdiff_t(t.shape[ax])) {
                inside = false;
                break;
            }
            in_flat += std::size_t(src) * in_strides[ax];
        }
        if (inside) out.data[flat] = t.data[in_flat];
        // advance multi-index
        for (std::size_t ax = rank; ax-- > 0;) {
            if (++idx[ax] < out_shape[ax]) break;
            idx[ax] = 0;
        }
    }
    return out;
}

template <typename T>
Tensor<T> pad(const Tensor<T>& t, const std::vector<AxisAmount>& amounts) {
    return pad_crop(t, amounts, PadMode::ZeroPad);
}

template <typename T>
Tensor<T> crop(const Tensor<T>& t, const std::vector<AxisAmount>& amounts) {
    return pad_crop(t, amounts, PadMode::Crop);
}

// ---------------------------------------------------------------------------
// reductions
// ---------------------------------------------------------------------------

enum class Reduce { Sum, Mean, Max };

template <typename T>
Tensor<T> reduce(const Tensor<T>& t, std::vector<std::size_t> axes, Reduce kind,
                 bool keep_dims = false) {
    if (axes.empty()) return t;
    std::sort(axes.begin(), axes.end());
    for (std::size_t i = 0; i < axes.size(); ++i) {
        if (axes[i] >= t.rank())
            throw std::invalid_argument("reduce axis " + std::to_string(axes[i]) +
                                        " out of range for rank " + std::to_string(t.rank()));
        if (i && axes[i] == axes[i - 1])
            throw std::invalid_argument("reduce axes must be distinct");
    }

    std::vector<bool> reduced(t.rank(), false);
    for (std::size_t ax : axes) reduced[ax] = true;

    Shape out_shape;
    for (std::size_t ax = 0; ax < t.rank(); ++ax) {
        if (!reduced[ax])
            out_shape.push_back(t.shape[ax]);
        else if (keep_dims)
            out_shape.push_back(1);
    }

    std::size_t count = 1;
    for (std::size_t ax : axes) count *= t.shape[ax];
    if (count == 0 && kind != Reduce::Sum)
        throw std::invalid_argument("cannot take " +
                                    std::string(kind == Reduce::Mean ? "mean" : "max") +
                                    " over empty extent");

    Tensor<T> out(out_shape);
    if (kind == Reduce::Max)
        std::fill(out.data.begin(), out.data.end(), -std::numeric_limits<T>::infinity());

    // Map each input element to its output slot.
    std::vector<std::size_t> idx(t.rank(), 0);
    std::vector<std::size_t> out_strides_by_axis(t.rank(), 0);
    {
        // stride of each non-reduced input axis in the packed output
        std::size_t acc = 1;
        for (std::size_t ax = t.rank(); ax-- > 0;) {
            if (!reduced[ax]) {
                out_strides_by_axis[ax] = acc;
                acc *= t.shape[ax];
            }
        }
    }
    for (std::size_t flat = 0; flat < t.numel(); ++flat) {
        std::size_t out_flat = 0;
        for (std::size_t ax = 0; ax < t.rank(); ++ax)
            if (!reduced[ax]) out_flat += idx[ax] * out_strides_by_axis[ax];
        if (kind == Reduce::Max)
            out.data[out_flat] = std::max(out.data[out_flat], t.data[flat]);
        else
            out.data[out_flat] += t.data[flat];
        for (std::size_t ax = t.rank(); ax-- > 0;) {
            if (++idx[ax] < t.shape[ax]) break;
            idx[ax] = 0;
        }
    }
    if (kind == Reduce::Mean)
        for (T& v : out.data) v /= T(count);
    return out;
}

}  // namespace steer
