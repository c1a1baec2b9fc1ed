#ifndef FAVAE_MODEL_HPP
#define FAVAE_MODEL_HPP

#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "favae/checkpoint.hpp"
#include "favae/features.hpp"
#include "favae/latent.hpp"
#include "favae/rng.hpp"
#include "favae/tape.hpp"
#include "favae/wavelet.hpp"

namespace favae {

// Single traversal primitive all layers implement: walks (name, value, bound
// tape id) triples in a fixed order. Collection, binding and gradient
// gathering are all built on it, so their orders can never drift apart.
using ParamVisitor = std::function<void(const std::string&, TensorF&, Tape::Id&)>;

using ParamList = std::vector<std::pair<std::string, TensorF*>>;

// ---- layers ---------------------------------------------------------------

struct Conv2dLayer {
    int in = 0, out = 0, k = 3, stride = 1;
    Pad pad = Pad::same;
    TensorF w, b;
    Tape::Id w_id, b_id;

    void init(int in_ch, int out_ch, int kernel, int stride_, Pad pad_, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor& fn);
    Tape::Id apply(Tape& tape, Tape::Id x) const;
};

struct GroupNormLayer {
    int channels = 0, groups = 1;
    TensorF gain, bias;
    Tape::Id gain_id, bias_id;

    void init(int ch);
    void visit(const std::string& prefix, const ParamVisitor& fn);
    Tape::Id apply(Tape& tape, Tape::Id x) const;
};

struct LinearLayer {
    int in = 0, out = 0;
    TensorF w, b;
    Tape::Id w_id, b_id;

    void init(int in_dim, int out_dim, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor& fn);
    Tape::Id apply(Tape& tape, Tape::Id x) const;
};

// gn -> swish -> conv -> gn -> swish -> conv, plus identity skip.
struct ResBlock {
    GroupNormLayer gn1, gn2;
    Conv2dLayer conv1, conv2;

    void init(int ch, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor& fn);
    Tape::Id apply(Tape& tape, Tape::Id x) const;
};

// Binds every parameter reached by m.visit into the tape.
template <typename M>
void bind_params(Tape& tape, bool train, M& m, const std::string& prefix = "p") {
    m.visit(prefix, [&](const std::string&, TensorF& v, Tape::Id& id) {
        id = tape.leaf(v, train, "param");
    });
}

// ---- branch networks --------------------------------------------------------

// Hierarchy config for one VAE branch. The spatial factor f = 2^stages is
// relative to the branch input (the subband grid, itself at half pixel
// resolution, which is why stage counts here run one lower than a
// pixel-domain VAE of the same overall factor).
struct BranchConfig {
    int in_ch = 3;
    int base = 32;
    int stages = 3;
    int blocks_per_stage = 2;
    int latent_ch = 8;
    int disc_base = 32;
    double beta = 1e-6;
    double lambda_vf = 0.0;
    double lambda_gan = 0.0;
    double lambda_lpips = 0.0;
    bool l1_rec = false;  // high branch reconstructs with mean-|.|

    int spatial_factor() const { return 1 << stages; }
    int width_at(int stage) const;  // channel doubling, capped at 4x base
    void validate() const;
};

struct Encoder {
    BranchConfig cfg;
    Conv2dLayer stem;
    std::vector<ResBlock> blocks;    // stages * blocks_per_stage
    std::vector<Conv2dLayer> downs;  // one per stage
    ResBlock mid;
    GroupNormLayer head_norm;
    Conv2dLayer head;  // -> 2 * latent_ch

    void init(const BranchConfig& c, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor& fn);
    DiagGaussianLatent apply(Tape& tape, Tape::Id x) const;
};

struct Decoder {
    BranchConfig cfg;
    Conv2dLayer stem;
    ResBlock mid;
    std::vector<Conv2dLayer> ups;  // conv after each nearest-upsample
    std::vector<ResBlock> blocks;
    GroupNormLayer head_norm;
    Conv2dLayer head;  // -> in_ch, tanh output

    void init(const BranchConfig& c, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor& fn);
    Tape::Id apply(Tape& tape, Tape::Id z) const;
};

// Patch discriminator: 4 stride-2 convs with leaky_relu between, ending in a
// 1-channel logit map.
struct Discriminator {
    std::vector<Conv2dLayer> convs;

    void init(int in_ch, int base, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor& fn);
    void bind(Tape& tape, bool train);
    Tape::Id apply(Tape& tape, Tape::Id x) const;
};

// One frequency branch: encoder/decoder pair, its discriminator, and (low
// branch only) the learned 1x1 projection for VF alignment. Parameters are
// never shared across branches.
struct Branch {
    BranchConfig cfg;
    Encoder enc;
    Decoder dec;
    Discriminator disc;
    std::optional<Conv2dLayer> vf_proj;

    void init(const BranchConfig& c, std::uint64_t seed, int vf_feat_ch /*0 = none*/);
    void visit_generator(const std::string& prefix, const ParamVisitor& fn);
    void visit_discriminator(const std::string& prefix, const ParamVisitor& fn);
    void bind_generator(Tape& tape, bool train);
    std::int64_t param_count();  // generator + discriminator
};

// The full two-branch model plus the normalization contract it was trained
// under.
struct FaVaeModel {
    Branch low, high;
    NormParams norm;
    ValueRange range = ValueRange::unit;
    FeatureProviderPtr provider;  // may be null when no feature losses run

    void visit(const ParamVisitor& fn);       // all parameters, fixed order
    ParamList params();                       // name -> tensor view
};

FaVaeModel make_favae_model(const BranchConfig& low_cfg, const BranchConfig& high_cfg,
                            ValueRange range, NormParams::Scheme scheme, std::uint64_t seed,
                            FeatureProviderPtr provider);

// Single VAE over the 4C-channel stack of normalized subbands: the coupled
// ablation baseline trained with the same wavelet-domain data.
struct CoupledVaeModel {
    Branch body;
    NormParams norm;
    ValueRange range = ValueRange::unit;
};

CoupledVaeModel make_coupled_model(const BranchConfig& cfg, ValueRange range,
                                   NormParams::Scheme scheme, std::uint64_t seed);

// ---- encode / decode / reconstruct -----------------------------------------

// Posterior of a branch input; spatial dims must be divisible by 2^stages.
DiagGaussianLatent encode(Tape& tape, Branch& branch, Tape::Id x, bool train);
Tape::Id decode(Tape& tape, Branch& branch, Tape::Id z, bool train);

// Off-graph posterior mean / decode (deterministic inference path).
TensorF encode_mean(Branch& branch, const TensorF& x);
TensorF decode_plain(Branch& branch, const TensorF& z);

// Test seam: bypass a decoder so reconstruction exercises only the wavelet
// plumbing.
struct ReconstructHooks {
    bool identity_low = false;
    bool identity_high = false;
};

// dwt -> normalize -> encode/decode both branches on the posterior mean ->
// denormalize -> idwt, clamped to the declared range.
ImageTensor reconstruct(const ImageTensor& x, FaVaeModel& model,
                        const ReconstructHooks& hooks = {});

// Same pipeline through the coupled baseline.
ImageTensor reconstruct_coupled(const ImageTensor& x, CoupledVaeModel& model);

// Branch inputs after dwt + normalization: low = ll, high = packed details.
std::pair<TensorF, TensorF> branch_inputs(const ImageTensor& x, NormParams::Scheme scheme);

// Inverse of branch_inputs for decoded outputs: unpack, denormalize, idwt,
// clamp to the declared range.
ImageTensor decode_subbands(const TensorF& ll_norm, const TensorF& packed_norm,
                            const NormParams& norm, ValueRange range);

// ---- checkpoints ------------------------------------------------------------

NamedTensors favae_to_tensors(FaVaeModel& model);
FaVaeModel favae_from_tensors(const NamedTensors& t, FeatureProviderPtr provider);

void save_favae(const std::string& path, FaVaeModel& model);
FaVaeModel load_favae(const std::string& path, FeatureProviderPtr provider);

}  // namespace favae

#endif
