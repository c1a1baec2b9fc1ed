#ifndef FAVAE_TAPE_HPP
#define FAVAE_TAPE_HPP

#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "favae/parallel.hpp"
#include "favae/tensor.hpp"

namespace favae {

enum class Pad { same, valid };

// Reverse-mode autodiff over dense tensors. Define-by-run: values are
// computed eagerly as ops are recorded; backward() walks the tape once in
// reverse insertion order (a valid topological order). Templated on the
// scalar type: float for training, double for the gradient-check test mode.
template <typename T>
class TapeT {
  public:
    using Tensor = TensorT<T>;

    struct Id {
        int idx = -1;
        bool valid() const { return idx >= 0; }
    };

    TapeT() = default;
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    // ---- leaves ---------------------------------------------------------

    Id leaf(Tensor v, bool requires_grad, const char* tag = "leaf") {
        nodes_.push_back(Node{});
        Node& n = nodes_.back();
        n.value = std::move(v);
        n.requires_grad = requires_grad;
        n.tag = tag;
        return Id{static_cast<int>(nodes_.size()) - 1};
    }

    Id constant(Tensor v, const char* tag = "const") { return leaf(std::move(v), false, tag); }

    // Grad-stopping copy of a node's current value.
    Id detach(Id x) { return leaf(val(x), false, "detach"); }

    // ---- accessors ------------------------------------------------------

    const Tensor& val(Id id) const { return nodes_[id.idx].value; }
    const Tensor& grad(Id id) const { return nodes_[id.idx].grad; }
    bool has_grad(Id id) const { return nodes_[id.idx].has_grad; }
    double scalar(Id id) const { return static_cast<double>(nodes_[id.idx].value.data[0]); }
    size_t size() const { return nodes_.size(); }

    // ---- elementwise unary ---------------------------------------------

    Id swish(Id x) {
        return unary(x, "swish",
                     [](T v) {
                         const T s = sigmoid(v);
                         return v * s;
                     },
                     [](T v, T /*y*/) {
                         const T s = sigmoid(v);
                         return s * (T(1) + v * (T(1) - s));
                     });
    }

    Id leaky_relu(Id x, T alpha = T(0.2)) {
        return unary(x, "leaky_relu", [alpha](T v) { return v > T(0) ? v : alpha * v; },
                     [alpha](T v, T) { return v > T(0) ? T(1) : alpha; });
    }

    Id relu(Id x) { return leaky_relu(x, T(0)); }

    Id tanh_act(Id x) {
        return unary(x, "tanh", [](T v) { return std::tanh(v); },
                     [](T, T y) { return T(1) - y * y; });
    }

    Id exp_op(Id x) {
        return unary(x, "exp", [](T v) { return std::exp(v); }, [](T, T y) { return y; });
    }

    Id sqrt_op(Id x) {
        return unary(x, "sqrt", [](T v) { return std::sqrt(v); },
                     [](T, T y) { return y > T(0) ? T(0.5) / y : T(0); });
    }

    Id abs_op(Id x) {
        return unary(x, "abs", [](T v) { return std::abs(v); },
                     [](T v, T) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); });
    }

    Id clamp(Id x, T lo, T hi) {
        return unary(x, "clamp",
                     [lo, hi](T v) { return v < lo ? lo : (v > hi ? hi : v); },
                     [lo, hi](T v, T) { return (v > lo && v < hi) ? T(1) : T(0); });
    }

    // y = a*x + b with scalar constants.
    Id affine(Id x, T a, T b) {
        return unary(x, "affine", [a, b](T v) { return a * v + b; }, [a](T, T) { return a; });
    }

    // ---- elementwise binary (same shape, or b broadcast along dim 0) ----

    Id add(Id a, Id b) {
        return binary(a, b, "add", [](T x, T y) { return x + y; },
                      [](T, T, T, T g) { return g; }, [](T, T, T, T g) { return g; });
    }

    Id sub(Id a, Id b) {
        return binary(a, b, "sub", [](T x, T y) { return x - y; },
                      [](T, T, T, T g) { return g; }, [](T, T, T, T g) { return -g; });
    }

    Id mul(Id a, Id b) {
        return binary(a, b, "mul", [](T x, T y) { return x * y; },
                      [](T, T y, T, T g) { return g * y; }, [](T x, T, T, T g) { return g * x; });
    }

    Id div(Id a, Id b) {
        return binary(a, b, "div", [](T x, T y) { return x / y; },
                      [](T, T y, T, T g) { return g / y; },
                      [](T, T y, T out, T g) { return -g * out / y; });
    }

    // ---- structural ops -------------------------------------------------

    Id reshape(Id x, std::vector<int> new_shape) {
        const Tensor& xv = val(x);
        if (Tensor::count(new_shape) != xv.numel())
            throw DimensionError(msg("reshape: cannot view ", xv.shape_str(), " as ",
                                     Tensor::shape_str(new_shape)));
        Tensor out(new_shape, xv.data);
        Id y = make(std::move(out), {x}, "reshape");
        set_backward(y, [this, x, y]() {
            if (!wants(x)) return;
            Tensor& gx = grad_buf(x);
            const Tensor& gy = grad(y);
            for (std::int64_t i = 0; i < gy.numel(); ++i) gx.data[i] += gy.data[i];
        });
        return y;
    }

    Id concat_channels(Id a, Id b) {
        const Tensor& av = val(a);
        const Tensor& bv = val(b);
        if (av.rank() != bv.rank() || av.rank() < 2)
            throw DimensionError(msg("concat_channels: ranks differ or < 2: ", av.shape_str(),
                                     " vs ", bv.shape_str()));
        for (int d = 1; d < av.rank(); ++d)
            if (av.shape[d] != bv.shape[d])
                throw DimensionError(msg("concat_channels: trailing dims differ: ", av.shape_str(),
                                         " vs ", bv.shape_str()));
        std::vector<int> shape = av.shape;
        shape[0] += bv.shape[0];
        Tensor out(shape);
        std::copy(av.data.begin(), av.data.end(), out.data.begin());
        std::copy(bv.data.begin(), bv.data.end(), out.data.begin() + av.numel());
        Id y = make(std::move(out), {a, b}, "concat_channels");
        const std::int64_t na = av.numel();
        set_backward(y, [this, a, b, y, na]() {
            const Tensor& gy = grad(y);
            if (wants(a)) {
                Tensor& ga = grad_buf(a);
                for (std::int64_t i = 0; i < na; ++i) ga.data[i] += gy.data[i];
            }
            if (wants(b)) {
                Tensor& gb = grad_buf(b);
                for (std::int64_t i = na; i < gy.numel(); ++i) gb.data[i - na] += gy.data[i];
            }
        });
        return y;
    }

    Id slice_channels(Id x, int c0, int c1) {
        const Tensor& xv = val(x);
        if (xv.rank() < 2 || c0 < 0 || c1 > xv.shape[0] || c0 >= c1)
            throw DimensionError(msg("slice_channels: range [", c0, ",", c1, ") invalid for ",
                                     xv.shape_str()));
        std::vector<int> shape = xv.shape;
        shape[0] = c1 - c0;
        const std::int64_t inner = xv.numel() / xv.shape[0];
        Tensor out(shape);
        std::copy(xv.data.begin() + c0 * inner, xv.data.begin() + c1 * inner, out.data.begin());
        Id y = make(std::move(out), {x}, "slice_channels");
        set_backward(y, [this, x, y, c0, inner]() {
            if (!wants(x)) return;
            Tensor& gx = grad_buf(x);
            const Tensor& gy = grad(y);
            for (std::int64_t i = 0; i < gy.numel(); ++i) gx.data[c0 * inner + i] += gy.data[i];
        });
        return y;
    }

    // x: (C, spatial...); picks flattened spatial positions -> (C, S).
    Id gather_positions(Id x, std::vector<int> pos) {
        const Tensor& xv = val(x);
        if (xv.rank() < 2)
            throw DimensionError(msg("gather_positions: need rank >= 2, got ", xv.shape_str()));
        const int C = xv.shape[0];
        const std::int64_t inner = xv.numel() / C;
        for (int p : pos)
            if (p < 0 || p >= inner)
                throw ArgumentError(msg("gather_positions: index ", p, " out of [0,", inner, ")"));
        const int S = static_cast<int>(pos.size());
        Tensor out({C, S});
        for (int c = 0; c < C; ++c)
            for (int s = 0; s < S; ++s) out.data[c * S + s] = xv.data[c * inner + pos[s]];
        Id y = make(std::move(out), {x}, "gather_positions");
        set_backward(y, [this, x, y, pos, inner, C, S]() {
            if (!wants(x)) return;
            Tensor& gx = grad_buf(x);
            const Tensor& gy = grad(y);
            for (int c = 0; c < C; ++c)
                for (int s = 0; s < S; ++s) gx.data[c * inner + pos[s]] += gy.data[c * S + s];
        });
        return y;
    }

    // (C, rest...) -> (1, rest...): sum over dim 0.
    Id sum_channels(Id x) {
        const Tensor& xv = val(x);
        if (xv.rank() < 2)
            throw DimensionError(msg("sum_channels: need rank >= 2, got ", xv.shape_str()));
        const int C = xv.shape[0];
        const std::int64_t inner = xv.numel() / C;
        std::vector<int> shape = xv.shape;
        shape[0] = 1;
        Tensor out(shape);
        for (int c = 0; c < C; ++c)
            for (std::int64_t j = 0; j < inner; ++j) out.data[j] += xv.data[c * inner + j];
        Id y = make(std::move(out), {x}, "sum_channels");
        set_backward(y, [this, x, y, C, inner]() {
            if (!wants(x)) return;
            Tensor& gx = grad_buf(x);
            const Tensor& gy = grad(y);
            for (int c = 0; c < C; ++c)
                for (std::int64_t j = 0; j < inner; ++j) gx.data[c * inner + j] += gy.data[j];
        });
        return y;
    }

    // x: (C, rest...) plus per-channel bias v: (C).
    Id add_channel_bias(Id x, Id v) {
        const Tensor& xv = val(x);
        const Tensor& vv = val(v);
        if (xv.rank() < 2 || vv.rank() != 1 || vv.shape[0] != xv.shape[0])
            throw DimensionError(msg("add_channel_bias: ", xv.shape_str(), " with bias ",
                                     vv.shape_str()));
        const int C = xv.shape[0];
        const std::int64_t inner = xv.numel() / C;
        Tensor out = xv;
        for (int c = 0; c < C; ++c)
            for (std::int64_t j = 0; j < inner; ++j) out.data[c * inner + j] += vv.data[c];
        Id y = make(std::move(out), {x, v}, "add_channel_bias");
        set_backward(y, [this, x, v, y, C, inner]() {
            const Tensor& gy = grad(y);
            if (wants(x)) {
                Tensor& gx = grad_buf(x);
                for (std::int64_t i = 0; i < gy.numel(); ++i) gx.data[i] += gy.data[i];
            }
            if (wants(v)) {
                Tensor& gv = grad_buf(v);
                for (int c = 0; c < C; ++c) {
                    T acc = T(0);
                    for (std::int64_t j = 0; j < inner; ++j) acc += gy.data[c * inner + j];
                    gv.data[c] += acc;
                }
            }
        });
        return y;
    }

    // ---- reductions and losses -----------------------------------------

    Id mean_reduce(Id x) {
        const Tensor& xv = val(x);
        const std::int64_t n = xv.numel();
        T acc = T(0);
        for (T v : xv.data) acc += v;
        Id y = make(Tensor::scalar(acc / static_cast<T>(n)), {x}, "mean_reduce");
        set_backward(y, [this, x, y, n]() {
            if (!wants(x)) return;
            Tensor& gx = grad_buf(x);
            const T g = grad(y).data[0] / static_cast<T>(n);
            for (auto& v : gx.data) v += g;
        });
        return y;
    }

    // mean squared error (the l2 loss of the op set).
    Id l2_loss(Id a, Id b) {
        require_same_shape(a, b, "l2_loss");
        const Tensor& av = val(a);
        const Tensor& bv = val(b);
        const std::int64_t n = av.numel();
        T acc = T(0);
        for (std::int64_t i = 0; i < n; ++i) {
            const T d = av.data[i] - bv.data[i];
            acc += d * d;
        }
        Id y = make(Tensor::scalar(acc / static_cast<T>(n)), {a, b}, "l2_loss");
        set_backward(y, [this, a, b, y, n]() {
            const T g = grad(y).data[0] * T(2) / static_cast<T>(n);
            const Tensor& av2 = val(a);
            const Tensor& bv2 = val(b);
            if (wants(a)) {
                Tensor& ga = grad_buf(a);
                for (std::int64_t i = 0; i < n; ++i) ga.data[i] += g * (av2.data[i] - bv2.data[i]);
            }
            if (wants(b)) {
                Tensor& gb = grad_buf(b);
                for (std::int64_t i = 0; i < n; ++i) gb.data[i] -= g * (av2.data[i] - bv2.data[i]);
            }
        });
        return y;
    }

    // mean absolute error (the l1 loss of the op set).
    Id l1_loss(Id a, Id b) {
        require_same_shape(a, b, "l1_loss");
        const Tensor& av = val(a);
        const Tensor& bv = val(b);
        const std::int64_t n = av.numel();
        T acc = T(0);
        for (std::int64_t i = 0; i < n; ++i) acc += std::abs(av.data[i] - bv.data[i]);
        Id y = make(Tensor::scalar(acc / static_cast<T>(n)), {a, b}, "l1_loss");
        set_backward(y, [this, a, b, y, n]() {
            const T g = grad(y).data[0] / static_cast<T>(n);
            const Tensor& av2 = val(a);
            const Tensor& bv2 = val(b);
            auto sgn = [](T v) { return v > T(0) ? T(1) : (v < T(0) ? T(-1) : T(0)); };
            if (wants(a)) {
                Tensor& ga = grad_buf(a);
                for (std::int64_t i = 0; i < n; ++i)
                    ga.data[i] += g * sgn(av2.data[i] - bv2.data[i]);
            }
            if (wants(b)) {
                Tensor& gb = grad_buf(b);
                for (std::int64_t i = 0; i < n; ++i)
                    gb.data[i] -= g * sgn(av2.data[i] - bv2.data[i]);
            }
        });
        return y;
    }

    // 0.5 * sum(mu^2 + exp(logvar) - 1 - logvar). Callers clamp logvar first.
    Id kl_diag_gaussian(Id mean, Id logvar) {
        require_same_shape(mean, logvar, "kl_diag_gaussian");
        const Tensor& mv = val(mean);
        const Tensor& lv = val(logvar);
        const std::int64_t n = mv.numel();
        T acc = T(0);
        for (std::int64_t i = 0; i < n; ++i)
            acc += mv.data[i] * mv.data[i] + std::exp(lv.data[i]) - T(1) - lv.data[i];
        Id y = make(Tensor::scalar(acc * T(0.5)), {mean, logvar}, "kl_diag_gaussian");
        set_backward(y, [this, mean, logvar, y, n]() {
            const T g = grad(y).data[0];
            const Tensor& mv2 = val(mean);
            const Tensor& lv2 = val(logvar);
            if (wants(mean)) {
                Tensor& gm = grad_buf(mean);
                for (std::int64_t i = 0; i < n; ++i) gm.data[i] += g * mv2.data[i];
            }
            if (wants(logvar)) {
                Tensor& gl = grad_buf(logvar);
                for (std::int64_t i = 0; i < n; ++i)
                    gl.data[i] += g * T(0.5) * (std::exp(lv2.data[i]) - T(1));
            }
        });
        return y;
    }

    // ---- linear algebra --------------------------------------------------

    Id transpose(Id x) {
        const Tensor& xv = val(x);
        if (xv.rank() != 2)
            throw DimensionError(msg("transpose: need rank-2, got ", xv.shape_str()));
        const int R = xv.shape[0], C = xv.shape[1];
        Tensor out({C, R});
        for (int r = 0; r < R; ++r)
            for (int c = 0; c < C; ++c) out.data[c * R + r] = xv.data[r * C + c];
        Id y = make(std::move(out), {x}, "transpose");
        set_backward(y, [this, x, y, R, C]() {
            if (!wants(x)) return;
            Tensor& gx = grad_buf(x);
            const Tensor& gy = grad(y);
            for (int r = 0; r < R; ++r)
                for (int c = 0; c < C; ++c) gx.data[r * C + c] += gy.data[c * R + r];
        });
        return y;
    }

    Id matmul(Id a, Id b) {
        const Tensor& av = val(a);
        const Tensor& bv = val(b);
        if (av.rank() != 2 || bv.rank() != 2 || av.shape[1] != bv.shape[0])
            throw DimensionError(msg("matmul: incompatible ", av.shape_str(), " x ",
                                     bv.shape_str()));
        const int M = av.shape[0], K = av.shape[1], N = bv.shape[1];
        Tensor out({M, N});
        for (int m = 0; m < M; ++m)
            for (int k = 0; k < K; ++k) {
                const T s = av.data[m * K + k];
                for (int n = 0; n < N; ++n) out.data[m * N + n] += s * bv.data[k * N + n];
            }
        Id y = make(std::move(out), {a, b}, "matmul");
        set_backward(y, [this, a, b, y, M, K, N]() {
            const Tensor& gy = grad(y);
            const Tensor& av2 = val(a);
            const Tensor& bv2 = val(b);
            if (wants(a)) {  // ga = gy . b^T
                Tensor& ga = grad_buf(a);
                for (int m = 0; m < M; ++m)
                    for (int k = 0; k < K; ++k) {
                        T acc = T(0);
                        for (int n = 0; n < N; ++n) acc += gy.data[m * N + n] * bv2.data[k * N + n];
                        ga.data[m * K + k] += acc;
                    }
            }
            if (wants(b)) {  // gb = a^T . gy
                Tensor& gb = grad_buf(b);
                for (int k = 0; k < K; ++k)
                    for (int m = 0; m < M; ++m) {
                        const T s = av2.data[m * K + k];
                        for (int n = 0; n < N; ++n) gb.data[k * N + n] += s * gy.data[m * N + n];
                    }
            }
        });
        return y;
    }

    // x: (N, in), w: (out, in), b: (out) -> (N, out)
    Id linear(Id x, Id w, Id b) {
        const Tensor& xv = val(x);
        const Tensor& wv = val(w);
        const Tensor& bv = val(b);
        if (xv.rank() != 2 || wv.rank() != 2 || bv.rank() != 1 || xv.shape[1] != wv.shape[1] ||
            bv.shape[0] != wv.shape[0])
            throw DimensionError(msg("linear: x", xv.shape_str(), " w", wv.shape_str(), " b",
                                     bv.shape_str()));
        const int N = xv.shape[0], In = xv.shape[1], Out = wv.shape[0];
        Tensor out({N, Out});
        for (int n = 0; n < N; ++n)
            for (int o = 0; o < Out; ++o) {
                T acc = bv.data[o];
                for (int i = 0; i < In; ++i) acc += xv.data[n * In + i] * wv.data[o * In + i];
                out.data[n * Out + o] = acc;
            }
        Id y = make(std::move(out), {x, w, b}, "linear");
        set_backward(y, [this, x, w, b, y, N, In, Out]() {
            const Tensor& gy = grad(y);
            const Tensor& xv2 = val(x);
            const Tensor& wv2 = val(w);
            if (wants(x)) {
                Tensor& gx = grad_buf(x);
                for (int n = 0; n < N; ++n)
                    for (int i = 0; i < In; ++i) {
                        T acc = T(0);
                        for (int o = 0; o < Out; ++o)
                            acc += gy.data[n * Out + o] * wv2.data[o * In + i];
                        gx.data[n * In + i] += acc;
                    }
            }
            if (wants(w)) {
                Tensor& gw = grad_buf(w);
                for (int o = 0; o < Out; ++o)
                    for (int i = 0; i < In; ++i) {
                        T acc = T(0);
                        for (int n = 0; n < N; ++n)
                            acc += gy.data[n * Out + o] * xv2.data[n * In + i];
                        gw.data[o * In + i] += acc;
                    }
            }
            if (wants(b)) {
                Tensor& gb = grad_buf(b);
                for (int o = 0; o < Out; ++o) {
                    T acc = T(0);
                    for (int n = 0; n < N; ++n) acc += gy.data[n * Out + o];
                    gb.data[o] += acc;
                }
            }
        });
        return y;
    }

    // ---- spatial ops -----------------------------------------------------

    Id nearest_upsample2x(Id x) {
        const Tensor& xv = val(x);
        if (xv.rank() != 3)
            throw DimensionError(msg("nearest_upsample2x: need (C,H,W), got ", xv.shape_str()));
        const int C = xv.shape[0], H = xv.shape[1], W = xv.shape[2];
        Tensor out({C, 2 * H, 2 * W});
        for (int c = 0; c < C; ++c)
            for (int y2 = 0; y2 < 2 * H; ++y2) {
                const T* src = &xv.data[(static_cast<std::int64_t>(c) * H + y2 / 2) * W];
                T* dst = &out.data[(static_cast<std::int64_t>(c) * 2 * H + y2) * 2 * W];
                for (int x2 = 0; x2 < 2 * W; ++x2) dst[x2] = src[x2 / 2];
            }
        Id y = make(std::move(out), {x}, "nearest_upsample2x");
        set_backward(y, [this, x, y, C, H, W]() {
            if (!wants(x)) return;
            Tensor& gx = grad_buf(x);
            const Tensor& gy = grad(y);
            for (int c = 0; c < C; ++c)
                for (int yy = 0; yy < H; ++yy)
                    for (int xx = 0; xx < W; ++xx) {
                        T acc = T(0);
                        for (int dy = 0; dy < 2; ++dy)
                            for (int dx = 0; dx < 2; ++dx)
                                acc += gy.data[(static_cast<std::int64_t>(c) * 2 * H + 2 * yy + dy) *
                                                   2 * W +
                                               2 * xx + dx];
                        gx.data[(static_cast<std::int64_t>(c) * H + yy) * W + xx] += acc;
                    }
        });
        return y;
    }

    // x: (Cin,H,W), w: (Cout,Cin,kh,kw), b: (Cout). stride 1|2, pad same|valid.
    Id conv2d(Id x, Id w, Id b, int stride, Pad pad) {
        const Tensor& xv = val(x);
        const Tensor& wv = val(w);
        const Tensor& bv = val(b);
        if (xv.rank() != 3 || wv.rank() != 4 || bv.rank() != 1)
            throw DimensionError(msg("conv2d: x", xv.shape_str(), " w", wv.shape_str(), " b",
                                     bv.shape_str()));
        if (xv.shape[0] != wv.shape[1] || bv.shape[0] != wv.shape[0])
            throw DimensionError(msg("conv2d: channel mismatch x", xv.shape_str(), " w",
                                     wv.shape_str()));
        if (stride != 1 && stride != 2)
            throw ArgumentError(msg("conv2d: stride must be 1 or 2, got ", stride));

        ConvDims d{};
        d.cin = xv.shape[0];
        d.h = xv.shape[1];
        d.wdt = xv.shape[2];
        d.cout = wv.shape[0];
        d.kh = wv.shape[2];
        d.kw = wv.shape[3];
        d.stride = stride;
        if (pad == Pad::same) {
            d.oh = (d.h + stride - 1) / stride;
            d.ow = (d.wdt + stride - 1) / stride;
            const int pad_h = std::max(0, (d.oh - 1) * stride + d.kh - d.h);
            const int pad_w = std::max(0, (d.ow - 1) * stride + d.kw - d.wdt);
            d.pt = pad_h / 2;
            d.pl = pad_w / 2;
        } else {
            if (d.h < d.kh || d.wdt < d.kw)
                throw DimensionError(msg("conv2d valid: input ", xv.shape_str(),
                                         " smaller than kernel ", wv.shape_str()));
            d.oh = (d.h - d.kh) / stride + 1;
            d.ow = (d.wdt - d.kw) / stride + 1;
            d.pt = 0;
            d.pl = 0;
        }

        Tensor out({d.cout, d.oh, d.ow});
        conv_forward(xv, wv, bv, out, d);
        Id y = make(std::move(out), {x, w, b}, "conv2d");
        set_backward(y, [this, x, w, b, y, d]() {
            const Tensor& gy = grad(y);
            const Tensor& xv2 = val(x);
            const Tensor& wv2 = val(w);
            if (wants(b)) {
                Tensor& gb = grad_buf(b);
                const std::int64_t plane = static_cast<std::int64_t>(d.oh) * d.ow;
                for (int oc = 0; oc < d.cout; ++oc) {
                    T acc = T(0);
                    const T* g = &gy.data[oc * plane];
                    for (std::int64_t i = 0; i < plane; ++i) acc += g[i];
                    gb.data[oc] += acc;
                }
            }
            if (wants(w)) conv_backward_w(xv2, gy, grad_buf(w), d);
            if (wants(x)) conv_backward_x(wv2, gy, grad_buf(x), d);
        });
        return y;
    }

    // Per-sample group normalization over (C,H,W) with affine gain/bias (C).
    Id group_norm(Id x, Id gain, Id bias, int groups, T eps = T(1e-5)) {
        const Tensor& xv = val(x);
        const Tensor& gv = val(gain);
        const Tensor& bv = val(bias);
        if (xv.rank() != 3)
            throw DimensionError(msg("group_norm: need (C,H,W), got ", xv.shape_str()));
        const int C = xv.shape[0];
        if (gv.rank() != 1 || gv.shape[0] != C || bv.rank() != 1 || bv.shape[0] != C)
            throw DimensionError(msg("group_norm: gain/bias must be (", C, "), got ",
                                     gv.shape_str(), " and ", bv.shape_str()));
        if (groups < 1 || C % groups != 0)
            throw ArgumentError(msg("group_norm: groups ", groups, " must divide channels ", C));
        const std::int64_t plane = static_cast<std::int64_t>(xv.shape[1]) * xv.shape[2];
        const int cpg = C / groups;
        const std::int64_t gsize = cpg * plane;

        Tensor out(xv.shape);
        std::vector<T> mean(groups), istd(groups);
        for (int g = 0; g < groups; ++g) {
            const T* src = &xv.data[g * gsize];
            T mu = T(0);
            for (std::int64_t i = 0; i < gsize; ++i) mu += src[i];
            mu /= static_cast<T>(gsize);
            T var = T(0);
            for (std::int64_t i = 0; i < gsize; ++i) {
                const T dv = src[i] - mu;
                var += dv * dv;
            }
            var /= static_cast<T>(gsize);
            mean[g] = mu;
            istd[g] = T(1) / std::sqrt(var + eps);
        }
        for (int c = 0; c < C; ++c) {
            const int g = c / cpg;
            const T mu = mean[g], is = istd[g];
            const T ga = gv.data[c], bi = bv.data[c];
            const T* src = &xv.data[c * plane];
            T* dst = &out.data[c * plane];
            for (std::int64_t i = 0; i < plane; ++i) dst[i] = ga * (src[i] - mu) * is + bi;
        }
        Id y = make(std::move(out), {x, gain, bias}, "group_norm");
        set_backward(y, [this, x, gain, bias, y, groups, cpg, plane, gsize, mean, istd, C]() {
            const Tensor& gy = grad(y);
            const Tensor& xv2 = val(x);
            const Tensor& gv2 = val(gain);
            if (wants(gain)) {
                Tensor& gg = grad_buf(gain);
                for (int c = 0; c < C; ++c) {
                    const int g = c / cpg;
                    const T mu = mean[g], is = istd[g];
                    T acc = T(0);
                    for (std::int64_t i = 0; i < plane; ++i)
                        acc += gy.data[c * plane + i] * (xv2.data[c * plane + i] - mu) * is;
                    gg.data[c] += acc;
                }
            }
            if (wants(bias)) {
                Tensor& gb = grad_buf(bias);
                for (int c = 0; c < C; ++c) {
                    T acc = T(0);
                    for (std::int64_t i = 0; i < plane; ++i) acc += gy.data[c * plane + i];
                    gb.data[c] += acc;
                }
            }
            if (wants(x)) {
                Tensor& gx = grad_buf(x);
                for (int g = 0; g < groups; ++g) {
                    const T mu = mean[g], is = istd[g];
                    // h = gy * gain(c); dx = is*(h - mean(h) - xhat*mean(h*xhat))
                    T sum_h = T(0), sum_hx = T(0);
                    for (int cc = 0; cc < cpg; ++cc) {
                        const int c = g * cpg + cc;
                        const T ga = gv2.data[c];
                        for (std::int64_t i = 0; i < plane; ++i) {
                            const T h = gy.data[c * plane + i] * ga;
                            const T xh = (xv2.data[c * plane + i] - mu) * is;
                            sum_h += h;
                            sum_hx += h * xh;
                        }
                    }
                    const T mh = sum_h / static_cast<T>(gsize);
                    const T mhx = sum_hx / static_cast<T>(gsize);
                    for (int cc = 0; cc < cpg; ++cc) {
                        const int c = g * cpg + cc;
                        const T ga = gv2.data[c];
                        for (std::int64_t i = 0; i < plane; ++i) {
                            const T h = gy.data[c * plane + i] * ga;
                            const T xh = (xv2.data[c * plane + i] - mu) * is;
                            gx.data[c * plane + i] += is * (h - mh - xh * mhx);
                        }
                    }
                }
            }
        });
        return y;
    }

    // ---- backward ---------------------------------------------------------

    void backward(Id loss) {
        if (!loss.valid() || loss.idx >= static_cast<int>(nodes_.size()))
            throw ArgumentError("backward: invalid loss id");
        if (nodes_[loss.idx].value.numel() != 1)
            throw DimensionError(msg("backward: loss must be scalar, got ",
                                     nodes_[loss.idx].value.shape_str()));
        grad_buf(loss).data[0] = T(1);
        for (int i = loss.idx; i >= 0; --i) {
            Node& n = nodes_[i];
            if (n.has_grad && n.backward) n.backward();
        }
    }

  private:
    struct Node {
        Tensor value;
        Tensor grad;
        bool has_grad = false;
        bool requires_grad = false;
        const char* tag = "";
        std::function<void()> backward;
    };

    struct ConvDims {
        int cin, h, wdt, cout, kh, kw, stride, oh, ow, pt, pl;
    };

    std::vector<Node> nodes_;

    bool wants(Id id) const { return nodes_[id.idx].requires_grad; }

    Tensor& grad_buf(Id id) {
        Node& n = nodes_[id.idx];
        if (!n.has_grad) {
            n.grad = Tensor(n.value.shape);
            n.has_grad = true;
        }
        return n.grad;
    }

    Id make(Tensor value, std::initializer_list<Id> inputs, const char* tag) {
        bool rg = false;
        for (Id i : inputs) rg = rg || nodes_[i.idx].requires_grad;
        nodes_.push_back(Node{});
        Node& n = nodes_.back();
        n.value = std::move(value);
        n.requires_grad = rg;
        n.tag = tag;
        return Id{static_cast<int>(nodes_.size()) - 1};
    }

    void set_backward(Id id, std::function<void()> fn) {
        if (nodes_[id.idx].requires_grad) nodes_[id.idx].backward = std::move(fn);
    }

    void require_same_shape(Id a, Id b, const char* op) const {
        if (!val(a).same_shape(val(b)))
            throw DimensionError(msg(op, ": shape mismatch ", val(a).shape_str(), " vs ",
                                     val(b).shape_str()));
    }

    static T sigmoid(T v) { return T(1) / (T(1) + std::exp(-v)); }

    template <typename FwdFn, typename BwdFn>
    Id unary(Id x, const char* tag, FwdFn fwd, BwdFn bwd) {
        const Tensor& xv = val(x);
        Tensor out(xv.shape);
        for (std::int64_t i = 0; i < xv.numel(); ++i) out.data[i] = fwd(xv.data[i]);
        Id y = make(std::move(out), {x}, tag);
        set_backward(y, [this, x, y, bwd]() {
            if (!wants(x)) return;
            Tensor& gx = grad_buf(x);
            const Tensor& gy = grad(y);
            const Tensor& xv2 = val(x);
            const Tensor& yv2 = val(y);
            for (std::int64_t i = 0; i < gy.numel(); ++i)
                gx.data[i] += gy.data[i] * bwd(xv2.data[i], yv2.data[i]);
        });
        return y;
    }

    // Binary elementwise with optional broadcast of b along dim 0
    // (b.shape[0] == 1 and trailing dims equal).
    template <typename FwdFn, typename BwdA, typename BwdB>
    Id binary(Id a, Id b, const char* tag, FwdFn fwd, BwdA bwd_a, BwdB bwd_b) {
        const Tensor& av = val(a);
        const Tensor& bv = val(b);
        bool bcast = false;
        if (!av.same_shape(bv)) {
            bcast = av.rank() == bv.rank() && bv.shape[0] == 1 &&
                    std::equal(av.shape.begin() + 1, av.shape.end(), bv.shape.begin() + 1);
            if (!bcast)
                throw DimensionError(msg(tag, ": shape mismatch ", av.shape_str(), " vs ",
                                         bv.shape_str()));
        }
        const std::int64_t n = av.numel();
        const std::int64_t bn = bv.numel();
        Tensor out(av.shape);
        for (std::int64_t i = 0; i < n; ++i)
            out.data[i] = fwd(av.data[i], bv.data[bcast ? i % bn : i]);
        Id y = make(std::move(out), {a, b}, tag);
        set_backward(y, [this, a, b, y, bcast, n, bn, bwd_a, bwd_b]() {
            const Tensor& gy = grad(y);
            const Tensor& av2 = val(a);
            const Tensor& bv2 = val(b);
            const Tensor& yv2 = val(y);
            if (wants(a)) {
                Tensor& ga = grad_buf(a);
                for (std::int64_t i = 0; i < n; ++i) {
                    const std::int64_t j = bcast ? i % bn : i;
                    ga.data[i] += bwd_a(av2.data[i], bv2.data[j], yv2.data[i], gy.data[i]);
                }
            }
            if (wants(b)) {
                Tensor& gb = grad_buf(b);
                for (std::int64_t i = 0; i < n; ++i) {
                    const std::int64_t j = bcast ? i % bn : i;
                    gb.data[j] += bwd_b(av2.data[i], bv2.data[j], yv2.data[i], gy.data[i]);
                }
            }
        });
        return y;
    }

    // ---- conv kernels ----------------------------------------------------

    static void conv_forward(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& y,
                             const ConvDims& d) {
        const std::int64_t in_plane = static_cast<std::int64_t>(d.h) * d.wdt;
        const std::int64_t out_plane = static_cast<std::int64_t>(d.oh) * d.ow;
        parallel_for(d.cout, [&](std::int64_t oc) {
            T* yp = &y.data[oc * out_plane];
            const T bias = b.data[oc];
            for (std::int64_t i = 0; i < out_plane; ++i) yp[i] = bias;
            for (int ic = 0; ic < d.cin; ++ic) {
                const T* xp = &x.data[ic * in_plane];
                for (int ky = 0; ky < d.kh; ++ky)
                    for (int kx = 0; kx < d.kw; ++kx) {
                        const T wv = w.data[((oc * d.cin + ic) * d.kh + ky) * d.kw + kx];
                        if (wv == T(0)) continue;
                        for (int oy = 0; oy < d.oh; ++oy) {
                            const int iy = oy * d.stride + ky - d.pt;
                            if (iy < 0 || iy >= d.h) continue;
                            // valid ox range: 0 <= ox*stride + kx - pl < W
                            int ox_lo = 0, ox_hi = d.ow - 1;
                            clip_ox(kx, d.pl, d.stride, d.wdt, ox_lo, ox_hi);
                            const T* xrow = &xp[static_cast<std::int64_t>(iy) * d.wdt];
                            T* yrow = &yp[static_cast<std::int64_t>(oy) * d.ow];
                            for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                yrow[ox] += wv * xrow[ox * d.stride + kx - d.pl];
                        }
                    }
            }
        });
    }

    static void conv_backward_w(const Tensor& x, const Tensor& gy, Tensor& gw, const ConvDims& d) {
        const std::int64_t in_plane = static_cast<std::int64_t>(d.h) * d.wdt;
        const std::int64_t out_plane = static_cast<std::int64_t>(d.oh) * d.ow;
        parallel_for(d.cout, [&](std::int64_t oc) {
            const T* gp = &gy.data[oc * out_plane];
            for (int ic = 0; ic < d.cin; ++ic) {
                const T* xp = &x.data[ic * in_plane];
                for (int ky = 0; ky < d.kh; ++ky)
                    for (int kx = 0; kx < d.kw; ++kx) {
                        T acc = T(0);
                        for (int oy = 0; oy < d.oh; ++oy) {
                            const int iy = oy * d.stride + ky - d.pt;
                            if (iy < 0 || iy >= d.h) continue;
                            int ox_lo = 0, ox_hi = d.ow - 1;
                            clip_ox(kx, d.pl, d.stride, d.wdt, ox_lo, ox_hi);
                            const T* xrow = &xp[static_cast<std::int64_t>(iy) * d.wdt];
                            const T* grow = &gp[static_cast<std::int64_t>(oy) * d.ow];
                            for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                acc += grow[ox] * xrow[ox * d.stride + kx - d.pl];
                        }
                        gw.data[((oc * d.cin + ic) * d.kh + ky) * d.kw + kx] += acc;
                    }
            }
        });
    }

    static void conv_backward_x(const Tensor& w, const Tensor& gy, Tensor& gx, const ConvDims& d) {
        const std::int64_t in_plane = static_cast<std::int64_t>(d.h) * d.wdt;
        const std::int64_t out_plane = static_cast<std::int64_t>(d.oh) * d.ow;
        parallel_for(d.cin, [&](std::int64_t ic) {
            T* gxp = &gx.data[ic * in_plane];
            for (int oc = 0; oc < d.cout; ++oc) {
                const T* gp = &gy.data[oc * out_plane];
                for (int ky = 0; ky < d.kh; ++ky)
                    for (int kx = 0; kx < d.kw; ++kx) {
                        const T wv = w.data[((oc * d.cin + ic) * d.kh + ky) * d.kw + kx];
                        if (wv == T(0)) continue;
                        for (int oy = 0; oy < d.oh; ++oy) {
                            const int iy = oy * d.stride + ky - d.pt;
                            if (iy < 0 || iy >= d.h) continue;
                            int ox_lo = 0, ox_hi = d.ow - 1;
                            clip_ox(kx, d.pl, d.stride, d.wdt, ox_lo, ox_hi);
                            T* gxrow = &gxp[static_cast<std::int64_t>(iy) * d.wdt];
                            const T* grow = &gp[static_cast<std::int64_t>(oy) * d.ow];
                            for (int ox = ox_lo; ox <= ox_hi; ++ox)
                                gxrow[ox * d.stride + kx - d.pl] += wv * grow[ox];
                        }
                    }
            }
        });
    }

    // Narrow [ox_lo, ox_hi] so ix = ox*stride + kx - pl stays inside [0, W).
    static void clip_ox(int kx, int pl, int stride, int W, int& ox_lo, int& ox_hi) {
        const int shift = kx - pl;
        if (shift < 0) ox_lo = std::max(ox_lo, (-shift + stride - 1) / stride);
        const int max_ix = W - 1 - shift;
        if (max_ix < 0) {
            ox_hi = ox_lo - 1;
            return;
        }
        ox_hi = std::min(ox_hi, max_ix / stride);
    }
};

using Tape = TapeT<float>;
using TapeD = TapeT<double>;

}  // namespace favae

#endif
