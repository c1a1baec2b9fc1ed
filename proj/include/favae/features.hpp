#ifndef FAVAE_FEATURES_HPP
#define FAVAE_FEATURES_HPP

#include <memory>
#include <mutex>
#include <map>
#include <string>
#include <vector>

#include "favae/tape.hpp"

namespace favae {

// Pluggable image-feature source backing the perceptual proxy, the VF
// alignment loss and the feature-Frechet metric. Two implementations: a
// frozen random conv stack (default, no pretrained weights) and per-image
// feature files.
class FeatureProvider {
  public:
    virtual ~FeatureProvider() = default;

    // True when stages_in_graph is available (needed for loss terms that
    // backpropagate into a reconstruction).
    virtual bool supports_graph() const = 0;

    virtual std::vector<int> stage_channels(int in_channels) const = 0;

    // In-graph stage features of a (C,H,W) node; weights enter as constants.
    virtual std::vector<Tape::Id> stages_in_graph(Tape& tape, Tape::Id x) const;

    // Plain per-image stage features. `key` identifies the image for
    // file-backed providers (ignored by the random stack).
    virtual std::vector<TensorF> stages_plain(const TensorF& x, const std::string& key) const = 0;
};

using FeatureProviderPtr = std::shared_ptr<FeatureProvider>;

// Frozen random 3-stage conv stack (stride-2 conv + leaky_relu per stage).
// Weights are derived from a fixed seed and the input channel count, so the
// same images always map to the same features.
class RandomStackProvider : public FeatureProvider {
  public:
    explicit RandomStackProvider(std::uint64_t seed = 0xFA7EA7u);

    bool supports_graph() const override { return true; }
    std::vector<int> stage_channels(int in_channels) const override;
    std::vector<Tape::Id> stages_in_graph(Tape& tape, Tape::Id x) const override;
    std::vector<TensorF> stages_plain(const TensorF& x, const std::string& key) const override;

  private:
    struct Stack {
        std::vector<TensorF> w, b;  // one conv per stage
    };
    const Stack& stack_for(int in_channels) const;

    std::uint64_t seed_;
    mutable std::mutex mu_;
    mutable std::map<int, Stack> cache_;
};

// Reads per-image features from `<root>/<key>.favt` files holding tensors
// named stage0..stageN-1. Cannot participate in gradient graphs.
class FileFeatureProvider : public FeatureProvider {
  public:
    explicit FileFeatureProvider(std::string root);

    bool supports_graph() const override { return false; }
    std::vector<int> stage_channels(int in_channels) const override;
    std::vector<TensorF> stages_plain(const TensorF& x, const std::string& key) const override;

  private:
    std::string root_;
    mutable std::mutex mu_;
    mutable std::vector<int> probed_channels_;
};

// Concatenated per-stage channel means: the per-image descriptor used for
// feature-Frechet statistics.
std::vector<double> feature_vector(const std::vector<TensorF>& stages);

// Host-side nearest-neighbor resize of a (C,H,W) tensor.
TensorF nearest_resize(const TensorF& x, int out_h, int out_w);

}  // namespace favae

#endif
