#include "favae/spectrum.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>

namespace favae {

bool is_power_of_two(int n) { return n > 0 && (n & (n - 1)) == 0; }

double SpectrumGrid::radius_fraction(int y, int x) const {
    const double cy = height / 2, cx = width / 2;
    const double dy = y - cy, dx = x - cx;
    const double rmax = std::sqrt(cy * cy + cx * cx);
    return std::sqrt(dy * dy + dx * dx) / rmax;
}

void fft_radix2(std::vector<std::complex<double>>& v) {
    const size_t n = v.size();
    if (n <= 1) return;
    // Bit-reversal permutation.
    for (size_t i = 1, j = 0; i < n; ++i) {
        size_t bit = n >> 1;
        for (; j & bit; bit >>= 1) j ^= bit;
        j ^= bit;
        if (i < j) std::swap(v[i], v[j]);
    }
    for (size_t len = 2; len <= n; len <<= 1) {
        const double ang = -2.0 * M_PI / static_cast<double>(len);
        const std::complex<double> wlen(std::cos(ang), std::sin(ang));
        for (size_t i = 0; i < n; i += len) {
            std::complex<double> w(1.0, 0.0);
            for (size_t k = 0; k < len / 2; ++k) {
                const std::complex<double> u = v[i + k];
                const std::complex<double> t = v[i + k + len / 2] * w;
                v[i + k] = u + t;
                v[i + k + len / 2] = u - t;
                w *= wlen;
            }
        }
    }
}

namespace {

// 2-D FFT of one (H,W) channel plane, rows then columns.
std::vector<std::complex<double>> fft2(const TensorF& img, int c) {
    const int H = img.shape[1], W = img.shape[2];
    std::vector<std::complex<double>> grid(static_cast<size_t>(H) * W);
    std::vector<std::complex<double>> line;
    for (int y = 0; y < H; ++y) {
        line.assign(W, {0.0, 0.0});
        for (int x = 0; x < W; ++x) line[x] = {static_cast<double>(img.at(c, y, x)), 0.0};
        fft_radix2(line);
        for (int x = 0; x < W; ++x) grid[static_cast<size_t>(y) * W + x] = line[x];
    }
    for (int x = 0; x < W; ++x) {
        line.assign(H, {0.0, 0.0});
        for (int y = 0; y < H; ++y) line[y] = grid[static_cast<size_t>(y) * W + x];
        fft_radix2(line);
        for (int y = 0; y < H; ++y) grid[static_cast<size_t>(y) * W + x] = line[y];
    }
    return grid;
}

}  // namespace

SpectrumGrid power_spectrum(const ImageTensor& residual) {
    const int C = residual.channels(), H = residual.height(), W = residual.width();
    if (!is_power_of_two(H))
        throw DimensionError(msg("power_spectrum: height ", H,
                                 " is not a power of two; center-crop the input first"));
    if (!is_power_of_two(W))
        throw DimensionError(msg("power_spectrum: width ", W,
                                 " is not a power of two; center-crop the input first"));

    SpectrumGrid g;
    g.height = H;
    g.width = W;
    g.psd.assign(static_cast<size_t>(H) * W, 0.0);
    g.count = 1;

    const double norm = static_cast<double>(H) * static_cast<double>(W);
    for (int c = 0; c < C; ++c) {
        auto f = fft2(residual.data, c);
        // fftshift: frequency (ky,kx) lands at (ky+H/2 mod H, kx+W/2 mod W).
        for (int ky = 0; ky < H; ++ky) {
            const int sy = (ky + H / 2) % H;
            for (int kx = 0; kx < W; ++kx) {
                const int sx = (kx + W / 2) % W;
                g.at(sy, sx) += std::norm(f[static_cast<size_t>(ky) * W + kx]) / norm;
            }
        }
    }
    for (auto& v : g.psd) v /= static_cast<double>(C);
    return g;
}

SpectrumGrid average_spectra(const std::vector<std::pair<ImageTensor, ImageTensor>>& pairs) {
    if (pairs.empty()) throw ArgumentError("average_spectra: empty pair sequence");
    const auto& shape0 = pairs.front().first.data.shape;
    for (const auto& [x, xh] : pairs) {
        if (x.data.shape != shape0 || xh.data.shape != shape0)
            throw DimensionError(msg("average_spectra: shape mismatch, expected ",
                                     TensorF::shape_str(shape0)));
    }

    SpectrumGrid acc;
    // Per-pair spectra accumulated in fixed input order; pairs are
    // independent so per-item computation may run concurrently upstream.
    for (size_t i = 0; i < pairs.size(); ++i) {
        ImageTensor r = pairs[i].first;
        for (std::int64_t k = 0; k < r.data.numel(); ++k)
            r.data.data[k] -= pairs[i].second.data.data[k];
        SpectrumGrid s = power_spectrum(r);
        if (i == 0) {
            acc = s;
        } else {
            for (size_t k = 0; k < acc.psd.size(); ++k) acc.psd[k] += s.psd[k];
        }
    }
    for (auto& v : acc.psd) v /= static_cast<double>(pairs.size());
    acc.count = static_cast<int>(pairs.size());
    return acc;
}

SpectrumGrid log_view(const SpectrumGrid& g, double epsilon) {
    if (g.log_scaled) throw StateError("log_view: grid is already log-scaled");
    if (!(epsilon > 0.0)) throw ArgumentError("log_view: epsilon must be > 0");
    SpectrumGrid out = g;
    for (auto& v : out.psd) v = std::log10(v + epsilon);
    out.log_scaled = true;
    return out;
}

std::vector<std::pair<double, double>> radial_profile(const SpectrumGrid& g, int n_bins) {
    if (n_bins < 2) throw ArgumentError(msg("radial_profile: n_bins must be >= 2, got ", n_bins));
    std::vector<double> sums(n_bins, 0.0);
    std::vector<std::int64_t> counts(n_bins, 0);
    for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x < g.width; ++x) {
            const double r = g.radius_fraction(y, x);
            int bin = static_cast<int>(r * n_bins);
            if (bin >= n_bins) bin = n_bins - 1;  // the corner bin (r == 1)
            sums[bin] += g.at(y, x);
            counts[bin] += 1;
        }
    }
    std::vector<std::pair<double, double>> out;
    out.reserve(n_bins);
    for (int b = 0; b < n_bins; ++b) {
        const double center = (b + 0.5) / static_cast<double>(n_bins);
        const double mean = counts[b] > 0 ? sums[b] / static_cast<double>(counts[b]) : 0.0;
        out.emplace_back(center, mean);
    }
    return out;
}

std::pair<double, double> band_energy(const SpectrumGrid& g, double cutoff) {
    if (!(cutoff > 0.0 && cutoff < 1.0))
        throw ArgumentError(msg("band_energy: cutoff must lie in (0,1), got ", cutoff));
    if (g.log_scaled) throw StateError("band_energy: grid must not be log-scaled");
    double low = 0.0, high = 0.0;
    for (int y = 0; y < g.height; ++y)
        for (int x = 0; x < g.width; ++x)
            (g.radius_fraction(y, x) <= cutoff ? low : high) += g.at(y, x);
    return {low, high};
}

std::string spectrum_to_csv(const SpectrumGrid& g) {
    std::string out;
    out.reserve(g.psd.size() * 14);
    char buf[48];
    for (int y = 0; y < g.height; ++y) {
        for (int x = 0; x < g.width; ++x) {
            std::snprintf(buf, sizeof(buf), "%.9g", g.at(y, x));
            out += buf;
            out += (x + 1 < g.width) ? ',' : '\n';
        }
    }
    return out;
}

std::string spectrum_to_pgm(const SpectrumGrid& g) {
    double lo = g.psd.empty() ? 0.0 : g.psd[0];
    double hi = lo;
    for (double v : g.psd) {
        lo = std::min(lo, v);
        hi = std::max(hi, v);
    }
    const double span = (hi > lo) ? (hi - lo) : 1.0;
    std::string out = "P5\n" + std::to_string(g.width) + " " + std::to_string(g.height) + "\n255\n";
    out.reserve(out.size() + g.psd.size());
    for (double v : g.psd) {
        int q = static_cast<int>(std::lround((v - lo) / span * 255.0));
        q = std::clamp(q, 0, 255);
        out.push_back(static_cast<char>(static_cast<unsigned char>(q)));
    }
    return out;
}

}  // namespace favae
