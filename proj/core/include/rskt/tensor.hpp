#pragma once

#include "rskt/common.hpp"

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <sstream>
#include <type_traits>
#include <vector>

namespace rskt {

using Shape = std::vector<std::size_t>;

inline std::size_t numel(const Shape& s) {
    std::size_t n = 1;
    for (std::size_t d : s) n *= d;
    return n;
}

inline std::string shape_str(const Shape& s) {
    std::ostringstream os;
    os << "(";
    for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "x" : "") << s[i];
    os << ")";
    return os.str();
}

// Dense row-major n-dimensional array. The universal carrier for images,
// feature grids, cost volumes and logits. T is float (default width) or
// double (gradient checks); int32_t instantiations carry label rasters.
template <typename T>
class TensorT {
public:
    TensorT() = default;

    explicit TensorT(Shape shape, T fill = T(0))
        : shape_(std::move(shape)), data_(numel(shape_), fill) {}

    TensorT(Shape shape, std::vector<T> data) : shape_(std::move(shape)), data_(std::move(data)) {
        if (data_.size() != numel(shape_))
            throw ShapeError("tensor data size " + std::to_string(data_.size()) +
                             " does not match shape " + shape_str(shape_));
    }

    static TensorT zeros(Shape shape) { return TensorT(std::move(shape)); }
    static TensorT full(Shape shape, T v) { return TensorT(std::move(shape), v); }

    const Shape& shape() const { return shape_; }
    std::size_t rank() const { return shape_.size(); }
    std::size_t size() const { return data_.size(); }
    std::size_t dim(std::size_t i) const { return shape_.at(i); }
    bool empty() const { return data_.empty(); }

    T* data() { return data_.data(); }
    const T* data() const { return data_.data(); }
    std::vector<T>& vec() { return data_; }
    const std::vector<T>& vec() const { return data_; }

    T& operator[](std::size_t i) { return data_[i]; }
    const T& operator[](std::size_t i) const { return data_[i]; }

    // Multi-index access, row-major.
    T& at(std::initializer_list<std::size_t> idx) { return data_[offset(idx)]; }
    const T& at(std::initializer_list<std::size_t> idx) const { return data_[offset(idx)]; }

    std::size_t offset(std::initializer_list<std::size_t> idx) const {
        if (idx.size() != shape_.size())
            throw ShapeError("index rank mismatch for shape " + shape_str(shape_));
        std::size_t off = 0;
        auto it = idx.begin();
        for (std::size_t a = 0; a < shape_.size(); ++a, ++it) {
            if (*it >= shape_[a]) throw ShapeError("index out of bounds in axis " + std::to_string(a));
            off = off * shape_[a] + *it;
        }
        return off;
    }

    TensorT& reshape_inplace(Shape s) {
        if (numel(s) != data_.size())
            throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(s) + " changes element count");
        shape_ = std::move(s);
        return *this;
    }

    TensorT reshaped(Shape s) const {
        TensorT out = *this;
        out.reshape_inplace(std::move(s));
        return out;
    }

    bool all_finite() const {
        if constexpr (std::is_floating_point_v<T>) {
            for (T v : data_)
                if (!std::isfinite(v)) return false;
        }
        return true;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out(shape_);
        for (std::size_t i = 0; i < data_.size(); ++i) out[i] = static_cast<U>(data_[i]);
        return out;
    }

    bool same_shape(const TensorT& o) const { return shape_ == o.shape_; }

private:
    Shape shape_;
    std::vector<T> data_;
};

using Tensor = TensorT<float>;
using TensorD = TensorT<double>;
using IntTensor = TensorT<std::int32_t>;

template <typename T>
void check_finite(const TensorT<T>& t, const char* what) {
    if (!t.all_finite()) throw NumericError(std::string("non-finite values in ") + what);
}

// Counter-clockwise rotation by 90*k degrees of the leading two axes;
// trailing axes are carried unchanged. k is normalized mod 4.
// Single-step convention (square or not): out[i][j] = in[j][W-1-i].
template <typename T>
TensorT<T> rot90(const TensorT<T>& t, long long k) {
    if (t.rank() < 2) throw ShapeError("rot90 requires rank >= 2, got " + shape_str(t.shape()));
    long long steps = ((k % 4) + 4) % 4;
    TensorT<T> cur = t;
    for (long long s = 0; s < steps; ++s) {
        const std::size_t h = cur.dim(0), w = cur.dim(1);
        std::size_t inner = 1;
        for (std::size_t a = 2; a < cur.rank(); ++a) inner *= cur.dim(a);
        Shape out_shape = cur.shape();
        out_shape[0] = w;
        out_shape[1] = h;
        TensorT<T> out(out_shape);
        for (std::size_t i = 0; i < w; ++i) {
            for (std::size_t j = 0; j < h; ++j) {
                const T* src = cur.data() + (j * w + (w - 1 - i)) * inner;
                T* dst = out.data() + (i * h + j) * inner;
                std::copy(src, src + inner, dst);
            }
        }
        cur = std::move(out);
    }
    return cur;
}

template <typename T>
bool allclose(const TensorT<T>& a, const TensorT<T>& b, double atol = 1e-12, double rtol = 1e-9) {
    if (!a.same_shape(b)) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double x = static_cast<double>(a[i]), y = static_cast<double>(b[i]);
        if (std::abs(x - y) > atol + rtol * std::max(std::abs(x), std::abs(y))) return false;
    }
    return true;
}

template <typename T>
double max_rel_error(const TensorT<T>& a, const TensorT<T>& b, double floor = 1e-12) {
    if (!a.same_shape(b)) throw ShapeError("max_rel_error shape mismatch");
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        double x = static_cast<double>(a[i]), y = static_cast<double>(b[i]);
        double denom = std::max({std::abs(x), std::abs(y), floor});
        worst = std::max(worst, std::abs(x - y) / denom);
    }
    return worst;
}

} // namespace rskt
