#include "favae/wavelet.hpp"

#include <cmath>

namespace favae {

namespace {
constexpr double kInvSqrt2 = 0.70710678118654752440;
}

void SubbandSet::require_consistent() const {
    if (!(ll.same_shape(lh) && ll.same_shape(hl) && ll.same_shape(hh)))
        throw DimensionError(msg("subband shape mismatch: ll", ll.shape_str(), " lh",
                                 lh.shape_str(), " hl", hl.shape_str(), " hh", hh.shape_str()));
    if (ll.rank() != 3)
        throw DimensionError(msg("subbands must be rank-3 (C,H,W), got ", ll.shape_str()));
}

SubbandSet dwt2_haar(const ImageTensor& x) {
    x.require_even_dims();
    const int C = x.channels(), H = x.height(), W = x.width();
    const int h = H / 2, w = W / 2;

    SubbandSet s;
    s.source_range = x.range;
    s.ll = TensorF({C, h, w});
    s.lh = TensorF({C, h, w});
    s.hl = TensorF({C, h, w});
    s.hh = TensorF({C, h, w});

    // Row pass into temporaries (C, H, w), then column pass.
    TensorF rlo({C, H, w}), rhi({C, H, w});
    for (int c = 0; c < C; ++c) {
        for (int y = 0; y < H; ++y) {
            for (int u = 0; u < w; ++u) {
                const double a = x.data.at(c, y, 2 * u);
                const double b = x.data.at(c, y, 2 * u + 1);
                rlo.at(c, y, u) = static_cast<float>((a + b) * kInvSqrt2);
                rhi.at(c, y, u) = static_cast<float>((a - b) * kInvSqrt2);
            }
        }
        for (int v = 0; v < h; ++v) {
            for (int u = 0; u < w; ++u) {
                const double lo0 = rlo.at(c, 2 * v, u), lo1 = rlo.at(c, 2 * v + 1, u);
                const double hi0 = rhi.at(c, 2 * v, u), hi1 = rhi.at(c, 2 * v + 1, u);
                s.ll.at(c, v, u) = static_cast<float>((lo0 + lo1) * kInvSqrt2);
                s.hl.at(c, v, u) = static_cast<float>((lo0 - lo1) * kInvSqrt2);
                s.lh.at(c, v, u) = static_cast<float>((hi0 + hi1) * kInvSqrt2);
                s.hh.at(c, v, u) = static_cast<float>((hi0 - hi1) * kInvSqrt2);
            }
        }
    }
    return s;
}

ImageTensor idwt2_haar(const SubbandSet& s) {
    s.require_consistent();
    if (s.norm_state.has_value() && s.norm_state->scheme != NormParams::Scheme::none)
        throw StateError("idwt2_haar: subbands are normalized; denormalize first");
    const int C = s.channels(), h = s.height(), w = s.width();
    const int H = 2 * h, W = 2 * w;

    TensorF out({C, H, W});
    TensorF rlo({C, H, w}), rhi({C, H, w});
    for (int c = 0; c < C; ++c) {
        for (int v = 0; v < h; ++v) {
            for (int u = 0; u < w; ++u) {
                const double ll = s.ll.at(c, v, u), hl = s.hl.at(c, v, u);
                const double lh = s.lh.at(c, v, u), hh = s.hh.at(c, v, u);
                rlo.at(c, 2 * v, u) = static_cast<float>((ll + hl) * kInvSqrt2);
                rlo.at(c, 2 * v + 1, u) = static_cast<float>((ll - hl) * kInvSqrt2);
                rhi.at(c, 2 * v, u) = static_cast<float>((lh + hh) * kInvSqrt2);
                rhi.at(c, 2 * v + 1, u) = static_cast<float>((lh - hh) * kInvSqrt2);
            }
        }
        for (int y = 0; y < H; ++y) {
            for (int u = 0; u < w; ++u) {
                const double lo = rlo.at(c, y, u), hi = rhi.at(c, y, u);
                out.at(c, y, 2 * u) = static_cast<float>((lo + hi) * kInvSqrt2);
                out.at(c, y, 2 * u + 1) = static_cast<float>((lo - hi) * kInvSqrt2);
            }
        }
    }
    return ImageTensor(std::move(out), s.source_range);
}

NormParams make_norm_params(NormParams::Scheme scheme, ValueRange range) {
    NormParams p;
    p.scheme = scheme;
    if (scheme == NormParams::Scheme::affine_per_subband) {
        const double lo = range_lo(range), hi = range_hi(range);
        // ll of an in-range image lies in [2*lo, 2*hi]; detail magnitudes are
        // bounded by the range width. Both land inside [-1,1] after mapping.
        p.scale[0] = static_cast<float>(2.0 * (hi - lo));
        p.offset[0] = static_cast<float>(hi + lo);
        for (int i = 1; i < 4; ++i) {
            p.scale[i] = 2.f;
            p.offset[i] = 0.f;
        }
    }
    return p;
}

namespace {

TensorF affine_map(const TensorF& t, float offset, float scale, bool forward) {
    TensorF out = t;
    if (forward) {
        for (auto& v : out.data) v = (v - offset) / scale;
    } else {
        for (auto& v : out.data) v = v * scale + offset;
    }
    return out;
}

}  // namespace

SubbandSet normalize_subbands(const SubbandSet& s, NormParams::Scheme scheme) {
    s.require_consistent();
    if (s.norm_state.has_value())
        throw StateError("normalize_subbands: subbands already carry a norm_state");
    NormParams p = make_norm_params(scheme, s.source_range);
    SubbandSet out;
    out.source_range = s.source_range;
    if (scheme == NormParams::Scheme::none) {
        out.ll = s.ll;
        out.lh = s.lh;
        out.hl = s.hl;
        out.hh = s.hh;
    } else {
        out.ll = affine_map(s.ll, p.offset[0], p.scale[0], true);
        out.lh = affine_map(s.lh, p.offset[1], p.scale[1], true);
        out.hl = affine_map(s.hl, p.offset[2], p.scale[2], true);
        out.hh = affine_map(s.hh, p.offset[3], p.scale[3], true);
    }
    out.norm_state = p;
    return out;
}

SubbandSet denormalize_subbands(const SubbandSet& s) {
    s.require_consistent();
    if (!s.norm_state.has_value())
        throw StateError("denormalize_subbands: no norm_state present");
    const NormParams& p = *s.norm_state;
    SubbandSet out;
    out.source_range = s.source_range;
    if (p.scheme == NormParams::Scheme::none) {
        out.ll = s.ll;
        out.lh = s.lh;
        out.hl = s.hl;
        out.hh = s.hh;
    } else {
        out.ll = affine_map(s.ll, p.offset[0], p.scale[0], false);
        out.lh = affine_map(s.lh, p.offset[1], p.scale[1], false);
        out.hl = affine_map(s.hl, p.offset[2], p.scale[2], false);
        out.hh = affine_map(s.hh, p.offset[3], p.scale[3], false);
    }
    out.norm_state.reset();
    return out;
}

TensorF pack_high(const SubbandSet& s) {
    s.require_consistent();
    const int C = s.channels(), h = s.height(), w = s.width();
    TensorF out({3 * C, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    const TensorF* bands[3] = {&s.lh, &s.hl, &s.hh};
    for (int b = 0; b < 3; ++b)
        for (int c = 0; c < C; ++c)
            std::copy(bands[b]->data.begin() + c * plane, bands[b]->data.begin() + (c + 1) * plane,
                      out.data.begin() + (static_cast<std::int64_t>(b) * C + c) * plane);
    return out;
}

SubbandSet unpack_high(const TensorF& packed, ValueRange source_range) {
    if (packed.rank() != 3 || packed.shape[0] % 3 != 0)
        throw DimensionError(msg("unpack_high: expected (3C,h,w) tensor, got ",
                                 packed.shape_str()));
    const int C = packed.shape[0] / 3, h = packed.shape[1], w = packed.shape[2];
    SubbandSet s;
    s.source_range = source_range;
    s.ll = TensorF({C, h, w});
    s.lh = TensorF({C, h, w});
    s.hl = TensorF({C, h, w});
    s.hh = TensorF({C, h, w});
    const std::int64_t plane = static_cast<std::int64_t>(h) * w;
    TensorF* bands[3] = {&s.lh, &s.hl, &s.hh};
    for (int b = 0; b < 3; ++b)
        for (int c = 0; c < C; ++c)
            std::copy(packed.data.begin() + (static_cast<std::int64_t>(b) * C + c) * plane,
                      packed.data.begin() + (static_cast<std::int64_t>(b) * C + c + 1) * plane,
                      bands[b]->data.begin() + c * plane);
    return s;
}

std::pair<double, double> frequency_losses(const ImageTensor& x, const ImageTensor& xhat) {
    if (!x.data.same_shape(xhat.data))
        throw DimensionError(msg("frequency_losses: shape mismatch ", x.data.shape_str(), " vs ",
                                 xhat.data.shape_str()));
    SubbandSet a = dwt2_haar(x);
    SubbandSet b = dwt2_haar(xhat);

    auto mse_acc = [](const TensorF& p, const TensorF& q, double& sum, std::int64_t& n) {
        for (std::int64_t i = 0; i < p.numel(); ++i) {
            const double d = static_cast<double>(p.data[i]) - static_cast<double>(q.data[i]);
            sum += d * d;
        }
        n += p.numel();
    };

    double low_sum = 0.0, high_sum = 0.0;
    std::int64_t low_n = 0, high_n = 0;
    mse_acc(a.ll, b.ll, low_sum, low_n);
    mse_acc(a.lh, b.lh, high_sum, high_n);
    mse_acc(a.hl, b.hl, high_sum, high_n);
    mse_acc(a.hh, b.hh, high_sum, high_n);
    return {low_sum / static_cast<double>(low_n), high_sum / static_cast<double>(high_n)};
}

}  // namespace favae
