#ifndef FAVAE_DIFFUSION_HPP
#define FAVAE_DIFFUSION_HPP

#include <string>
#include <vector>

#include "favae/fusion.hpp"
#include "favae/model.hpp"

namespace favae {

// DDPM-style schedule: beta_t in (0,1), alpha_t = 1 - beta_t, alpha_bar_t
// strictly decreasing cumulative product.
struct NoiseSchedule {
    int T = 200;
    std::vector<double> beta, alpha, alpha_bar;

    static NoiseSchedule linear(int T = 200, double beta_start = 1e-4, double beta_end = 0.02);
    void validate() const;
};

// q(z_t | z_0): sqrt(abar_t) z0 + sqrt(1 - abar_t) eps.
TensorF q_sample(const TensorF& z0, const TensorF& eps, const NoiseSchedule& s, int t);

struct DenoiserConfig {
    int channels = 16;  // fused latent channels
    int h = 4, w = 4;   // latent grid
    int width = 32;
    int emb_dim = 32;
};

// Residual block with the timestep embedding injected between its convs.
struct DiffBlock {
    GroupNormLayer gn1, gn2;
    Conv2dLayer conv1, conv2;
    LinearLayer emb_proj;

    void init(int ch, int emb_dim, Rng& rng);
    void visit(const std::string& prefix, const ParamVisitor& fn);
    Tape::Id apply(Tape& tape, Tape::Id x, Tape::Id emb_row) const;
};

// epsilon-predicting conv U-shape: 4 embedding-conditioned stages with one
// downsample in the middle when the grid allows it.
struct Denoiser {
    DenoiserConfig cfg;
    bool use_down = false;
    Conv2dLayer stem;
    DiffBlock b1, b2, b3, b4;
    Conv2dLayer down, up_conv;
    GroupNormLayer head_norm;
    Conv2dLayer head;
    LinearLayer emb1, emb2;

    void init(const DenoiserConfig& c, std::uint64_t seed);
    void visit(const std::string& prefix, const ParamVisitor& fn);
    Tape::Id apply(Tape& tape, Tape::Id z, int t) const;
};

// Sinusoidal embedding of an integer timestep.
TensorF timestep_embedding(int t, int dim);

// Minimizes mean squared epsilon-prediction error over the standardized
// latents. Appends the per-step loss to loss_log when given; aborts with the
// step index on a non-finite loss.
Denoiser train_diffusion(const std::vector<FusedLatent>& latents, const NoiseSchedule& sched,
                         const DenoiserConfig& cfg, int steps, int batch, double lr,
                         std::uint64_t seed, std::vector<double>* loss_log = nullptr);

// Ancestral reverse chain for T steps; outputs are de-standardized fused
// latents.
std::vector<FusedLatent> sample_diffusion(Denoiser& den, const NoiseSchedule& sched, int n,
                                          std::uint64_t seed, const LatentStats& stats,
                                          int split_index);

// sample -> split -> decode both branches -> denormalize -> inverse DWT.
std::vector<ImageTensor> generate_images(Denoiser& den, const NoiseSchedule& sched,
                                         FaVaeModel& model, const LatentStats& stats,
                                         int split_index, int n, std::uint64_t seed);

// Bundled denoiser + schedule + latent stats file.
void save_denoiser(const std::string& path, Denoiser& den, const NoiseSchedule& sched,
                   const LatentStats& stats, int split_index);
struct DenoiserBundle {
    Denoiser denoiser;
    NoiseSchedule schedule;
    LatentStats stats;
    int split_index = 0;
};
DenoiserBundle load_denoiser(const std::string& path);

}  // namespace favae

#endif
