#ifndef FAVAE_SPECTRUM_HPP
#define FAVAE_SPECTRUM_HPP

#include <complex>
#include <utility>
#include <vector>

#include "favae/tensor.hpp"

namespace favae {

// 2-D power spectral density with the DC bin at (H/2, W/2). Convention:
// unnormalized forward DFT, psd = |F|^2 / (H*W), so sum(psd) equals the
// residual energy sum(r^2) (Plancherel). Channels are averaged.
struct SpectrumGrid {
    int height = 0;
    int width = 0;
    std::vector<double> psd;  // row-major (H, W)
    bool log_scaled = false;
    int count = 0;  // residuals averaged into this grid

    double& at(int y, int x) { return psd[static_cast<size_t>(y) * width + x]; }
    double at(int y, int x) const { return psd[static_cast<size_t>(y) * width + x]; }

    // Distance from the DC bin normalized so the corner bin sits at 1.
    double radius_fraction(int y, int x) const;
};

// In-place radix-2 FFT (forward, unnormalized). Size must be a power of two.
void fft_radix2(std::vector<std::complex<double>>& v);

// Channel-averaged, DC-centered PSD of one residual image. H and W must be
// powers of two; otherwise a dimension error suggests center-cropping.
SpectrumGrid power_spectrum(const ImageTensor& residual);

// Mean PSD of (x - xhat) over all pairs; count = number of pairs.
SpectrumGrid average_spectra(const std::vector<std::pair<ImageTensor, ImageTensor>>& pairs);

// Element-wise log10(psd + epsilon); refuses double application.
SpectrumGrid log_view(const SpectrumGrid& g, double epsilon = 1e-12);

// Mean psd binned by normalized radius; returns (bin-center radius, mean).
std::vector<std::pair<double, double>> radial_profile(const SpectrumGrid& g, int n_bins);

// Energy split at the cutoff radius: (sum over r <= cutoff, sum over rest).
std::pair<double, double> band_energy(const SpectrumGrid& g, double cutoff);

// Row-major CSV, one line per row.
std::string spectrum_to_csv(const SpectrumGrid& g);

// 8-bit PGM heatmap after min/max stretch (apply log_view first for Fig-style
// rendering).
std::string spectrum_to_pgm(const SpectrumGrid& g);

bool is_power_of_two(int n);

}  // namespace favae

#endif
