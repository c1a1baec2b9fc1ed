#ifndef FAVAE_LATENT_HPP
#define FAVAE_LATENT_HPP

#include "favae/rng.hpp"
#include "favae/tape.hpp"

namespace favae {

// Clamp bounds applied to log-variance before any exponentiation.
constexpr float kLogVarMin = -30.f;
constexpr float kLogVarMax = 20.f;

// Per-branch diagonal-Gaussian posterior: mean/logvar nodes plus the drawn
// sample with its noise recorded for replay determinism.
template <typename T>
struct DiagGaussianLatentT {
    typename TapeT<T>::Id mean;
    typename TapeT<T>::Id logvar;  // already clamped by the encoder head
    typename TapeT<T>::Id sample;  // invalid until reparameterized
    TensorT<T> eps;                // the recorded noise draw
};

using DiagGaussianLatent = DiagGaussianLatentT<float>;

// sample = mean + exp(logvar/2) * eps with eps ~ N(0,I) from rng. Gradients
// flow to mean and logvar; eps is a constant.
template <typename T>
typename TapeT<T>::Id reparameterize(TapeT<T>& tape, DiagGaussianLatentT<T>& lat, Rng& rng) {
    const TensorT<T>& mv = tape.val(lat.mean);
    TensorT<T> eps(mv.shape);
    for (auto& v : eps.data) v = static_cast<T>(rng.gaussian());
    lat.eps = eps;
    auto eps_id = tape.constant(std::move(eps), "eps");
    auto stddev = tape.exp_op(tape.affine(lat.logvar, T(0.5), T(0)));
    lat.sample = tape.add(lat.mean, tape.mul(stddev, eps_id));
    return lat.sample;
}

// Replays a previous draw (lat.eps) instead of consuming fresh randomness.
template <typename T>
typename TapeT<T>::Id reparameterize_with(TapeT<T>& tape, DiagGaussianLatentT<T>& lat,
                                          TensorT<T> eps) {
    lat.eps = eps;
    auto eps_id = tape.constant(std::move(eps), "eps");
    auto stddev = tape.exp_op(tape.affine(lat.logvar, T(0.5), T(0)));
    lat.sample = tape.add(lat.mean, tape.mul(stddev, eps_id));
    return lat.sample;
}

}  // namespace favae

#endif
