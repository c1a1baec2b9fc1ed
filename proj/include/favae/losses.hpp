#ifndef FAVAE_LOSSES_HPP
#define FAVAE_LOSSES_HPP

#include <string>
#include <vector>

#include "favae/model.hpp"

namespace favae {

// Per-step loss components for one branch. total is the weighted sum of the
// generator-side parts (gan_d is the discriminator's own objective).
struct LossBreakdown {
    int step = 0;
    std::string branch;
    double total = 0, rec = 0, kl = 0, vf = 0, gan_g = 0, gan_d = 0, lpips_proxy = 0;

    double weighted_sum(const BranchConfig& cfg, double gan_scale) const {
        return rec + cfg.beta * kl + cfg.lambda_vf * vf +
               cfg.lambda_gan * gan_scale * gan_g + cfg.lambda_lpips * lpips_proxy;
    }
};

std::string loss_log_header();
std::string loss_log_line(const LossBreakdown& b);

// Margin-hinged cosine alignment between a latent grid and projected
// features (both (c,h,w)): mean_i relu(1 - cos(z_i,f_i) - m1)
// + w_hyper * mean_{ij in pairs} relu(|cos(z_i,z_j) - cos(f_i,f_j)| - m2),
// with the pairwise term evaluated on the given subsampled positions.
Tape::Id vf_alignment_loss(Tape& tape, Tape::Id z, Tape::Id feats_projected, double m1, double m2,
                           double w_hyper, const std::vector<int>& pair_positions);

// VA-VAE margins (see BranchConfig wiring in the trainer).
constexpr double kVfM1 = 0.5;
constexpr double kVfM2 = 0.25;
constexpr double kVfWHyper = 0.1;

struct GanLossIds {
    Tape::Id gan_g;  // -mean(D(fake)), gradients reach the generator only
    Tape::Id gan_d;  // hinge on D(real) and D(fake detached)
};

// Binds the discriminator into this tape. disc_train controls whether its
// parameters take gradients (true for the discriminator's own step).
GanLossIds gan_losses(Tape& tape, Discriminator& disc, Tape::Id real, Tape::Id fake,
                      bool disc_train);

// Mean squared distance between unit-normalized provider features of x and
// xhat, averaged over stages.
Tape::Id perceptual_proxy(Tape& tape, Tape::Id x, Tape::Id xhat, const FeatureProvider& provider);

// Generator-side objective of one branch over a batch of branch inputs.
// Components are batch means; total composes them with the branch weights.
struct BranchLossGraph {
    Tape::Id total, rec, kl, vf, gan_g, lpips;  // invalid ids when a term is off
    std::vector<DiagGaussianLatent> latents;
    std::vector<Tape::Id> recons;

    LossBreakdown read(const Tape& tape, const BranchConfig& cfg, double gan_scale) const;
};

BranchLossGraph branch_generator_loss(Tape& tape, Branch& branch,
                                      const FeatureProviderPtr& provider,
                                      const std::vector<const TensorF*>& batch, double gan_scale,
                                      Rng& eps_rng, Rng& vf_rng, bool train);

// Discriminator objective over a batch (real inputs vs detached fakes).
Tape::Id branch_discriminator_loss(Tape& tape, Branch& branch,
                                   const std::vector<const TensorF*>& real_batch,
                                   const std::vector<TensorF>& fake_batch);

}  // namespace favae

#endif
