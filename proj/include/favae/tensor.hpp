#ifndef FAVAE_TENSOR_HPP
#define FAVAE_TENSOR_HPP

#include <cmath>
#include <cstdint>
#include <initializer_list>
#include <numeric>
#include <string>
#include <vector>

#include "favae/errors.hpp"

namespace favae {

// Dense row-major tensor of arbitrary rank. Default scalar type is float
// (training precision); double instantiations are used by the gradient-check
// test mode.
template <typename T>
struct TensorT {
    std::vector<int> shape;
    std::vector<T> data;

    TensorT() = default;
    explicit TensorT(std::vector<int> s) : shape(std::move(s)), data(count(shape), T(0)) {}
    TensorT(std::vector<int> s, std::vector<T> d) : shape(std::move(s)), data(std::move(d)) {
        if (static_cast<std::int64_t>(data.size()) != count(shape))
            throw DimensionError(msg("tensor: data size ", data.size(),
                                     " does not match shape ", shape_str(shape)));
    }

    static std::int64_t count(const std::vector<int>& s) {
        std::int64_t n = 1;
        for (int d : s) n *= d;
        return n;
    }

    static std::string shape_str(const std::vector<int>& s) {
        std::string out = "(";
        for (size_t i = 0; i < s.size(); ++i) {
            out += std::to_string(s[i]);
            if (i + 1 < s.size()) out += ",";
        }
        return out + ")";
    }

    std::int64_t numel() const { return static_cast<std::int64_t>(data.size()); }
    int rank() const { return static_cast<int>(shape.size()); }
    std::string shape_str() const { return shape_str(shape); }

    static TensorT zeros(std::vector<int> s) { return TensorT(std::move(s)); }
    static TensorT full(std::vector<int> s, T v) {
        TensorT t(std::move(s));
        std::fill(t.data.begin(), t.data.end(), v);
        return t;
    }
    static TensorT scalar(T v) { return TensorT({1}, {v}); }

    // 3-D (C,H,W) accessors; the dominant layout in this project.
    T& at(int c, int y, int x) {
        return data[(static_cast<std::int64_t>(c) * shape[1] + y) * shape[2] + x];
    }
    T at(int c, int y, int x) const {
        return data[(static_cast<std::int64_t>(c) * shape[1] + y) * shape[2] + x];
    }
    // 2-D (R,C)
    T& at(int r, int c) { return data[static_cast<std::int64_t>(r) * shape[1] + c]; }
    T at(int r, int c) const { return data[static_cast<std::int64_t>(r) * shape[1] + c]; }

    bool same_shape(const TensorT& o) const { return shape == o.shape; }

    bool all_finite() const {
        for (T v : data)
            if (!std::isfinite(static_cast<double>(v))) return false;
        return true;
    }

    template <typename U>
    TensorT<U> cast() const {
        TensorT<U> out;
        out.shape = shape;
        out.data.resize(data.size());
        for (size_t i = 0; i < data.size(); ++i) out.data[i] = static_cast<U>(data[i]);
        return out;
    }
};

using TensorF = TensorT<float>;
using TensorD = TensorT<double>;

// Declared pixel value range of an image.
enum class ValueRange { unit, symmetric };

inline double range_lo(ValueRange r) { return r == ValueRange::unit ? 0.0 : -1.0; }
inline double range_hi(ValueRange /*r*/) { return 1.0; }

inline std::string range_name(ValueRange r) { return r == ValueRange::unit ? "unit" : "symmetric"; }

inline ValueRange range_from_name(const std::string& s) {
    if (s == "unit") return ValueRange::unit;
    if (s == "symmetric") return ValueRange::symmetric;
    throw ArgumentError(msg("unknown value range '", s, "' (expected unit|symmetric)"));
}

// Pixel-domain carrier: (C,H,W) float data plus its declared value range.
// Residuals and subbands reuse the struct but are exempt from the range bound.
struct ImageTensor {
    TensorF data;
    ValueRange range = ValueRange::unit;

    ImageTensor() = default;
    ImageTensor(TensorF d, ValueRange r) : data(std::move(d)), range(r) {
        if (data.rank() != 3)
            throw DimensionError(msg("image: expected rank-3 (C,H,W) tensor, got ",
                                     data.shape_str()));
    }

    int channels() const { return data.shape[0]; }
    int height() const { return data.shape[1]; }
    int width() const { return data.shape[2]; }

    // Level-1 DWT needs even spatial dims; names the offending axis.
    void require_even_dims() const {
        if (height() < 2 || height() % 2 != 0)
            throw DimensionError(msg("image height ", height(), " must be even and >= 2"));
        if (width() < 2 || width() % 2 != 0)
            throw DimensionError(msg("image width ", width(), " must be even and >= 2"));
    }
};

}  // namespace favae

#endif
