#ifndef FAVAE_FUSION_HPP
#define FAVAE_FUSION_HPP

#include <utility>
#include <vector>

#include "favae/model.hpp"

namespace favae {

// Channel concatenation of the two branch latents, low channels first.
// split(fuse(a,b)) returns the originals exactly.
struct FusedLatent {
    TensorF data;        // (c_low + c_high, h, w)
    int split_index = 0; // = c_low
};

FusedLatent fuse(const TensorF& z_low, const TensorF& z_high);
std::pair<TensorF, TensorF> split(const FusedLatent& z);

// Per-channel standardization recorded at extraction time and inverted at
// sampling time.
struct LatentStats {
    std::vector<float> mu, sigma;
};

struct ExtractedLatents {
    std::vector<FusedLatent> latents;  // standardized
    LatentStats stats;
    int split_index = 0;
};

// Posterior means of both branches for every dataset image, fused and
// standardized. Deterministic for a fixed model and dataset.
ExtractedLatents extract_latents(const std::vector<ImageTensor>& dataset, FaVaeModel& model);

// Latent cache file (named-tensor binary).
void save_latents(const std::string& path, const ExtractedLatents& l);
ExtractedLatents load_latents(const std::string& path);

}  // namespace favae

#endif
