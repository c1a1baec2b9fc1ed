#ifndef FAVAE_WAVELET_HPP
#define FAVAE_WAVELET_HPP

#include <optional>
#include <utility>

#include "favae/tensor.hpp"

namespace favae {

// Affine per-subband renormalization parameters, order [ll, lh, hl, hh].
// normalized = (v - offset) / scale, so scale entries must stay positive.
struct NormParams {
    enum class Scheme { none, affine_per_subband };
    Scheme scheme = Scheme::none;
    float scale[4] = {1.f, 1.f, 1.f, 1.f};
    float offset[4] = {0.f, 0.f, 0.f, 0.f};
};

// The four level-1 orthonormal Haar subbands of an image, each (C, H/2, W/2).
// Orientation convention: lh = row-detail (rows high-passed), hl = column
// detail of row-lows, hh = diagonal. norm_state present iff normalized.
struct SubbandSet {
    TensorF ll, lh, hl, hh;
    std::optional<NormParams> norm_state;
    ValueRange source_range = ValueRange::unit;

    int channels() const { return ll.shape[0]; }
    int height() const { return ll.shape[1]; }
    int width() const { return ll.shape[2]; }
    void require_consistent() const;
};

// Level-1 separable orthonormal Haar analysis: rows then columns, filters
// low = (1,1)/sqrt(2), high = (1,-1)/sqrt(2), stride 2, no padding.
// Rejects odd spatial dims. Parseval holds on the result.
SubbandSet dwt2_haar(const ImageTensor& x);

// Exact inverse of dwt2_haar. Input must be unnormalized.
ImageTensor idwt2_haar(const SubbandSet& s);

// Maps each subband affinely into [-1,1] (ll: scale 2*(range width), offset
// 2*midpoint; detail bands: scale 2, offset 0). Records NormParams.
SubbandSet normalize_subbands(const SubbandSet& s, NormParams::Scheme scheme);

// Exact affine inverse of normalize_subbands; clears norm_state.
SubbandSet denormalize_subbands(const SubbandSet& s);

// NormParams that normalize_subbands would use for a given source range.
NormParams make_norm_params(NormParams::Scheme scheme, ValueRange range);

// Stacks the detail bands into a (3C, H/2, W/2) tensor, channel order
// [lh(0..C), hl(0..C), hh(0..C)].
TensorF pack_high(const SubbandSet& s);

// Exact inverse of pack_high; ll of the result is zero-filled unless given.
SubbandSet unpack_high(const TensorF& packed, ValueRange source_range);

// (L_L, L_H): mean squared error over the ll subbands, and over the
// concatenated detail subbands, of the two images. Unnormalized subbands.
std::pair<double, double> frequency_losses(const ImageTensor& x, const ImageTensor& xhat);

}  // namespace favae

#endif
