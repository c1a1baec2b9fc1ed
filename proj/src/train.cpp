#include "favae/train.hpp"

#include <cmath>

namespace favae {

void TrainConfig::validate() const {
    low.validate();
    high.validate();
    if (lr <= 0) throw ConfigError("train: lr must be > 0");
    if (batch < 1) throw ConfigError("train: batch must be >= 1");
    if (steps < 1) throw ConfigError("train: steps must be >= 1");
    if (warmup_frac < 0 || warmup_frac >= 1)
        throw ConfigError("train: warmup_frac must lie in [0,1)");
}

int validate_dataset(const std::vector<ImageTensor>& dataset) {
    if (dataset.empty()) throw DataError("dataset is empty");
    const int C = dataset.front().channels();
    for (size_t i = 0; i < dataset.size(); ++i) {
        const ImageTensor& img = dataset[i];
        img.require_even_dims();
        if (img.channels() != C)
            throw DataError(msg("dataset image ", i, " has ", img.channels(),
                                " channels, expected ", C));
        const float lo = static_cast<float>(range_lo(img.range));
        const float hi = static_cast<float>(range_hi(img.range));
        for (float v : img.data.data)
            if (!(v >= lo && v <= hi))
                throw DataError(msg("dataset image ", i, " has value ", v,
                                    " outside its declared ", range_name(img.range), " range"));
    }
    return C;
}

namespace {

bool finite(const LossBreakdown& b) {
    return std::isfinite(b.total) && std::isfinite(b.rec) && std::isfinite(b.kl) &&
           std::isfinite(b.vf) && std::isfinite(b.gan_g) && std::isfinite(b.gan_d) &&
           std::isfinite(b.lpips_proxy);
}

// Gathers batch-step gradients for every generator parameter (zeros for
// parameters untouched by the loss).
void generator_grads(Tape& tape, Branch& branch, std::vector<TensorF*>& params,
                     std::vector<TensorF>& grads) {
    branch.visit_generator("g", [&](const std::string&, TensorF& v, Tape::Id& id) {
        params.push_back(&v);
        grads.push_back(tape.has_grad(id) ? tape.grad(id) : TensorF(v.shape));
    });
}

void discriminator_grads(Tape& tape, Branch& branch, std::vector<TensorF*>& params,
                         std::vector<TensorF>& grads) {
    branch.visit_discriminator("d", [&](const std::string&, TensorF& v, Tape::Id& id) {
        params.push_back(&v);
        grads.push_back(tape.has_grad(id) ? tape.grad(id) : TensorF(v.shape));
    });
}

}  // namespace

LossBreakdown train_branch_step(Branch& branch, const FeatureProviderPtr& provider,
                                const std::vector<const TensorF*>& batch, double gan_scale,
                                BranchOptimizers& opts, Rng& eps_rng, Rng& vf_rng,
                                bool zero_grads, int step, const std::string& name) {
    LossBreakdown out;
    std::vector<TensorF> fakes;
    {
        Tape tape;
        BranchLossGraph g =
            branch_generator_loss(tape, branch, provider, batch, gan_scale, eps_rng, vf_rng, true);
        out = g.read(tape, branch.cfg, gan_scale);
        out.step = step;
        out.branch = name;
        if (!finite(out))
            throw NumericError(msg("non-finite loss at step ", step, " (branch ", name, ")"));
        tape.backward(g.total);

        std::vector<TensorF*> params;
        std::vector<TensorF> grads;
        generator_grads(tape, branch, params, grads);
        if (zero_grads)
            for (auto& g2 : grads) std::fill(g2.data.begin(), g2.data.end(), 0.f);
        opts.gen.update(params, grads);

        if (branch.cfg.lambda_gan > 0 && gan_scale > 0)
            for (auto id : g.recons) fakes.push_back(tape.val(id));
    }

    if (!fakes.empty()) {
        Tape tape;
        Tape::Id d_loss = branch_discriminator_loss(tape, branch, batch, fakes);
        out.gan_d = tape.scalar(d_loss);
        if (!std::isfinite(out.gan_d))
            throw NumericError(msg("non-finite discriminator loss at step ", step, " (branch ",
                                   name, ")"));
        tape.backward(d_loss);
        std::vector<TensorF*> params;
        std::vector<TensorF> grads;
        discriminator_grads(tape, branch, params, grads);
        if (zero_grads)
            for (auto& g2 : grads) std::fill(g2.data.begin(), g2.data.end(), 0.f);
        opts.disc.update(params, grads);
    }
    return out;
}

// ---- FaVaeTrainer ------------------------------------------------------------

FaVaeTrainer::FaVaeTrainer(const std::vector<ImageTensor>& dataset, TrainConfig cfg,
                           FeatureProviderPtr provider)
    : cfg_(std::move(cfg)),
      batch_rng_(derive_seed(cfg_.seed, "train.batch")),
      eps_rng_(derive_seed(cfg_.seed, "train.eps")),
      vf_rng_(derive_seed(cfg_.seed, "train.vf")) {
    const int C = validate_dataset(dataset);
    if (cfg_.batch > static_cast<int>(dataset.size()))
        throw ConfigError(msg("train: batch ", cfg_.batch, " exceeds dataset size ",
                              dataset.size()));
    cfg_.low.in_ch = C;
    cfg_.high.in_ch = 3 * C;
    cfg_.validate();

    model_ = make_favae_model(cfg_.low, cfg_.high, dataset.front().range, cfg_.scheme, cfg_.seed,
                              std::move(provider));
    opt_low_.gen.lr = opt_low_.disc.lr = cfg_.lr;
    opt_high_.gen.lr = opt_high_.disc.lr = cfg_.lr;

    low_inputs_.reserve(dataset.size());
    high_inputs_.reserve(dataset.size());
    for (const ImageTensor& img : dataset) {
        if (img.range != dataset.front().range)
            throw DataError("dataset mixes declared value ranges");
        auto [lo, hi] = branch_inputs(img, cfg_.scheme);
        low_inputs_.push_back(std::move(lo));
        high_inputs_.push_back(std::move(hi));
    }
    order_.resize(dataset.size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    batch_rng_.shuffle(order_.begin(), order_.end());
}

std::vector<int> FaVaeTrainer::next_batch() {
    if (order_pos_ + cfg_.batch > order_.size()) {
        batch_rng_.shuffle(order_.begin(), order_.end());
        order_pos_ = 0;
    }
    std::vector<int> idx(order_.begin() + order_pos_, order_.begin() + order_pos_ + cfg_.batch);
    order_pos_ += cfg_.batch;
    return idx;
}

void FaVaeTrainer::step(const StepMask& mask) {
    const int warmup_steps = static_cast<int>(cfg_.steps * cfg_.warmup_frac);
    const double gan_scale = step_ < warmup_steps ? 0.0 : 1.0;
    const std::vector<int> idx = next_batch();

    std::vector<const TensorF*> low_batch, high_batch;
    for (int i : idx) {
        low_batch.push_back(&low_inputs_[i]);
        high_batch.push_back(&high_inputs_[i]);
    }

    log_.push_back(train_branch_step(model_.low, model_.provider, low_batch, gan_scale, opt_low_,
                                     eps_rng_, vf_rng_, mask.zero_low, step_, "low"));
    log_.push_back(train_branch_step(model_.high, model_.provider, high_batch, gan_scale,
                                     opt_high_, eps_rng_, vf_rng_, mask.zero_high, step_, "high"));
    ++step_;

    if (cfg_.checkpoint_interval > 0 && !cfg_.checkpoint_path.empty() &&
        step_ % cfg_.checkpoint_interval == 0)
        save_favae(cfg_.checkpoint_path, model_);
}

void FaVaeTrainer::run() {
    while (step_ < cfg_.steps) step();
    if (!cfg_.checkpoint_path.empty()) save_favae(cfg_.checkpoint_path, model_);
}

std::string FaVaeTrainer::log_csv() const {
    std::string out = loss_log_header();
    for (const auto& b : log_) out += loss_log_line(b);
    return out;
}

// ---- CoupledTrainer ------------------------------------------------------------

CoupledTrainer::CoupledTrainer(const std::vector<ImageTensor>& dataset, BranchConfig cfg,
                               NormParams::Scheme scheme, double lr, int batch, int steps,
                               std::uint64_t seed, double warmup_frac)
    : batch_rng_(derive_seed(seed, "coupled.batch")),
      eps_rng_(derive_seed(seed, "coupled.eps")),
      vf_rng_(derive_seed(seed, "coupled.vf")),
      steps_(steps),
      batch_(batch),
      warmup_frac_(warmup_frac) {
    const int C = validate_dataset(dataset);
    if (batch_ > static_cast<int>(dataset.size()) || batch_ < 1)
        throw ConfigError("coupled train: bad batch size");
    cfg.in_ch = 4 * C;  // ll + packed details
    model_ = make_coupled_model(cfg, dataset.front().range, scheme, seed);
    opts_.gen.lr = opts_.disc.lr = lr;

    for (const ImageTensor& img : dataset) {
        auto [lo, hi] = branch_inputs(img, scheme);
        TensorF stacked({lo.shape[0] + hi.shape[0], lo.shape[1], lo.shape[2]});
        std::copy(lo.data.begin(), lo.data.end(), stacked.data.begin());
        std::copy(hi.data.begin(), hi.data.end(), stacked.data.begin() + lo.numel());
        inputs_.push_back(std::move(stacked));
    }
    order_.resize(dataset.size());
    for (size_t i = 0; i < order_.size(); ++i) order_[i] = static_cast<int>(i);
    batch_rng_.shuffle(order_.begin(), order_.end());
}

std::vector<int> CoupledTrainer::next_batch() {
    if (order_pos_ + batch_ > order_.size()) {
        batch_rng_.shuffle(order_.begin(), order_.end());
        order_pos_ = 0;
    }
    std::vector<int> idx(order_.begin() + order_pos_, order_.begin() + order_pos_ + batch_);
    order_pos_ += batch_;
    return idx;
}

void CoupledTrainer::step() {
    const int warmup_steps = static_cast<int>(steps_ * warmup_frac_);
    const double gan_scale = step_ < warmup_steps ? 0.0 : 1.0;
    const std::vector<int> idx = next_batch();
    std::vector<const TensorF*> batch;
    for (int i : idx) batch.push_back(&inputs_[i]);
    log_.push_back(train_branch_step(model_.body, nullptr, batch, gan_scale, opts_, eps_rng_,
                                     vf_rng_, false, step_, "coupled"));
    ++step_;
}

void CoupledTrainer::run() {
    while (step_ < steps_) step();
}

}  // namespace favae
