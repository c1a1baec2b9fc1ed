#ifndef FAVAE_TRAIN_HPP
#define FAVAE_TRAIN_HPP

#include <string>
#include <vector>

#include "favae/adam.hpp"
#include "favae/losses.hpp"
#include "favae/model.hpp"

namespace favae {

struct TrainConfig {
    BranchConfig low{.in_ch = 3, .base = 32, .stages = 3, .blocks_per_stage = 2, .latent_ch = 8};
    BranchConfig high{.in_ch = 9, .base = 32, .stages = 3, .blocks_per_stage = 2, .latent_ch = 8,
                      .lambda_gan = 1.0, .l1_rec = true};
    NormParams::Scheme scheme = NormParams::Scheme::affine_per_subband;
    double lr = 1e-4;
    int batch = 8;
    int steps = 500;
    std::uint64_t seed = 0;
    // GAN terms are weighted zero (and discriminators frozen) for this
    // leading fraction of the configured steps.
    double warmup_frac = 0.25;
    int checkpoint_interval = 0;  // 0 = final checkpoint only
    std::string checkpoint_path;

    void validate() const;
};

// Test hook: zero one branch's gradients before its optimizer step.
struct StepMask {
    bool zero_low = false;
    bool zero_high = false;
};

// Per-branch training state shared by the FA-VAE trainer and the coupled
// baseline: one generator optimizer, one discriminator optimizer.
struct BranchOptimizers {
    AdamState gen, disc;
};

// One generator(+discriminator) update for a branch on the given input batch.
// Returns the logged breakdown; throws NumericError on non-finite loss.
LossBreakdown train_branch_step(Branch& branch, const FeatureProviderPtr& provider,
                                const std::vector<const TensorF*>& batch, double gan_scale,
                                BranchOptimizers& opts, Rng& eps_rng, Rng& vf_rng,
                                bool zero_grads, int step, const std::string& name);

// Two-branch FA-VAE training over pixel-domain images. Branch inputs (the
// normalized subbands) are precomputed once; branches share nothing but the
// batch order.
class FaVaeTrainer {
  public:
    FaVaeTrainer(const std::vector<ImageTensor>& dataset, TrainConfig cfg,
                 FeatureProviderPtr provider);

    void step(const StepMask& mask = {});
    void run();  // executes the remaining configured steps

    FaVaeModel& model() { return model_; }
    const std::vector<LossBreakdown>& log() const { return log_; }
    int steps_done() const { return step_; }
    std::string log_csv() const;

  private:
    std::vector<int> next_batch();

    TrainConfig cfg_;
    FaVaeModel model_;
    std::vector<TensorF> low_inputs_, high_inputs_;
    BranchOptimizers opt_low_, opt_high_;
    Rng batch_rng_, eps_rng_, vf_rng_;
    std::vector<int> order_;
    size_t order_pos_ = 0;
    std::vector<LossBreakdown> log_;
    int step_ = 0;
};

// Coupled ablation baseline: a single VAE trained on the 4C-channel stack of
// normalized subbands with a joint objective.
class CoupledTrainer {
  public:
    CoupledTrainer(const std::vector<ImageTensor>& dataset, BranchConfig cfg,
                   NormParams::Scheme scheme, double lr, int batch, int steps,
                   std::uint64_t seed, double warmup_frac = 0.25);

    void step();
    void run();

    CoupledVaeModel& model() { return model_; }
    const std::vector<LossBreakdown>& log() const { return log_; }

  private:
    std::vector<int> next_batch();

    CoupledVaeModel model_;
    std::vector<TensorF> inputs_;
    BranchOptimizers opts_;
    Rng batch_rng_, eps_rng_, vf_rng_;
    std::vector<int> order_;
    size_t order_pos_ = 0;
    std::vector<LossBreakdown> log_;
    int step_ = 0, steps_ = 0, batch_ = 0;
    double warmup_frac_ = 0.25;
};

// Shared dataset validation: non-empty, rank/shape invariants, declared-range
// bounds, consistent channel count. Returns the channel count.
int validate_dataset(const std::vector<ImageTensor>& dataset);

}  // namespace favae

#endif
