#include "favae/diffusion.hpp"

#include <cmath>

#include "favae/adam.hpp"

namespace favae {

NoiseSchedule NoiseSchedule::linear(int T, double beta_start, double beta_end) {
    if (T < 2) throw ArgumentError("schedule: T must be >= 2");
    NoiseSchedule s;
    s.T = T;
    s.beta.resize(T);
    s.alpha.resize(T);
    s.alpha_bar.resize(T);
    double prod = 1.0;
    for (int t = 0; t < T; ++t) {
        s.beta[t] = beta_start + (beta_end - beta_start) * t / static_cast<double>(T - 1);
        s.alpha[t] = 1.0 - s.beta[t];
        prod *= s.alpha[t];
        s.alpha_bar[t] = prod;
    }
    s.validate();
    return s;
}

void NoiseSchedule::validate() const {
    if (static_cast<int>(beta.size()) != T || static_cast<int>(alpha_bar.size()) != T)
        throw ArgumentError("schedule: malformed arrays");
    double prev = 1.0;
    for (int t = 0; t < T; ++t) {
        if (!(beta[t] > 0.0 && beta[t] < 1.0))
            throw ArgumentError(msg("schedule: beta[", t, "] = ", beta[t], " outside (0,1)"));
        if (!(alpha_bar[t] > 0.0 && alpha_bar[t] < 1.0 && alpha_bar[t] < prev))
            throw ArgumentError(msg("schedule: alpha_bar not strictly decreasing in (0,1) at t=",
                                    t));
        prev = alpha_bar[t];
    }
}

TensorF q_sample(const TensorF& z0, const TensorF& eps, const NoiseSchedule& s, int t) {
    if (!z0.same_shape(eps))
        throw DimensionError(msg("q_sample: ", z0.shape_str(), " vs ", eps.shape_str()));
    if (t < 0 || t >= s.T) throw ArgumentError(msg("q_sample: t=", t, " outside [0,", s.T, ")"));
    const float a = static_cast<float>(std::sqrt(s.alpha_bar[t]));
    const float b = static_cast<float>(std::sqrt(1.0 - s.alpha_bar[t]));
    TensorF out(z0.shape);
    for (std::int64_t i = 0; i < z0.numel(); ++i) out.data[i] = a * z0.data[i] + b * eps.data[i];
    return out;
}

TensorF timestep_embedding(int t, int dim) {
    TensorF e({1, dim});
    const int half = dim / 2;
    for (int k = 0; k < half; ++k) {
        const double freq = std::exp(-std::log(10000.0) * k / static_cast<double>(half));
        e.data[k] = static_cast<float>(std::sin(t * freq));
        e.data[half + k] = static_cast<float>(std::cos(t * freq));
    }
    return e;
}

// ---- denoiser ---------------------------------------------------------------

void DiffBlock::init(int ch, int emb_dim, Rng& rng) {
    gn1.init(ch);
    conv1.init(ch, ch, 3, 1, Pad::same, rng);
    emb_proj.init(emb_dim, ch, rng);
    gn2.init(ch);
    conv2.init(ch, ch, 3, 1, Pad::same, rng);
}

void DiffBlock::visit(const std::string& p, const ParamVisitor& fn) {
    gn1.visit(p + ".gn1", fn);
    conv1.visit(p + ".conv1", fn);
    emb_proj.visit(p + ".emb_proj", fn);
    gn2.visit(p + ".gn2", fn);
    conv2.visit(p + ".conv2", fn);
}

Tape::Id DiffBlock::apply(Tape& tape, Tape::Id x, Tape::Id emb_row) const {
    auto h = conv1.apply(tape, tape.swish(gn1.apply(tape, x)));
    auto bias = tape.reshape(emb_proj.apply(tape, emb_row), {conv1.out});
    h = tape.add_channel_bias(h, bias);
    h = conv2.apply(tape, tape.swish(gn2.apply(tape, h)));
    return tape.add(x, h);
}

void Denoiser::init(const DenoiserConfig& c, std::uint64_t seed) {
    if (c.channels < 1 || c.width < 1 || c.emb_dim < 2 || c.emb_dim % 2 != 0)
        throw ConfigError("denoiser: bad config (channels/width >= 1, even emb_dim >= 2)");
    cfg = c;
    use_down = c.h >= 4 && c.w >= 4 && c.h % 2 == 0 && c.w % 2 == 0;
    Rng rng(derive_seed(seed, "denoiser"));
    const int W = c.width;
    stem.init(c.channels, W, 3, 1, Pad::same, rng);
    emb1.init(c.emb_dim, 2 * c.emb_dim, rng);
    emb2.init(2 * c.emb_dim, 2 * c.emb_dim, rng);
    b1.init(W, 2 * c.emb_dim, rng);
    b2.init(W, 2 * c.emb_dim, rng);
    if (use_down) {
        down.init(W, 2 * W, 3, 2, Pad::same, rng);
        b3.init(2 * W, 2 * c.emb_dim, rng);
        up_conv.init(2 * W, W, 3, 1, Pad::same, rng);
    } else {
        b3.init(W, 2 * c.emb_dim, rng);
    }
    b4.init(W, 2 * c.emb_dim, rng);
    head_norm.init(W);
    head.init(W, c.channels, 3, 1, Pad::same, rng);
}

void Denoiser::visit(const std::string& p, const ParamVisitor& fn) {
    stem.visit(p + ".stem", fn);
    emb1.visit(p + ".emb1", fn);
    emb2.visit(p + ".emb2", fn);
    b1.visit(p + ".b1", fn);
    b2.visit(p + ".b2", fn);
    if (use_down) {
        down.visit(p + ".down", fn);
        b3.visit(p + ".b3", fn);
        up_conv.visit(p + ".up_conv", fn);
    } else {
        b3.visit(p + ".b3", fn);
    }
    b4.visit(p + ".b4", fn);
    head_norm.visit(p + ".head_norm", fn);
    head.visit(p + ".head", fn);
}

Tape::Id Denoiser::apply(Tape& tape, Tape::Id z, int t) const {
    const TensorF& zv = tape.val(z);
    if (zv.rank() != 3 || zv.shape[0] != cfg.channels || zv.shape[1] != cfg.h ||
        zv.shape[2] != cfg.w)
        throw DimensionError(msg("denoiser: expected (", cfg.channels, ",", cfg.h, ",", cfg.w,
                                 "), got ", zv.shape_str()));
    auto emb_in = tape.constant(timestep_embedding(t, cfg.emb_dim), "temb");
    auto emb = emb2.apply(tape, tape.swish(emb1.apply(tape, emb_in)));

    auto h = stem.apply(tape, z);
    h = b1.apply(tape, h, emb);
    auto skip = b2.apply(tape, h, emb);
    if (use_down) {
        auto mid = b3.apply(tape, down.apply(tape, skip), emb);
        auto up = up_conv.apply(tape, tape.nearest_upsample2x(mid));
        h = tape.add(up, skip);
    } else {
        h = b3.apply(tape, skip, emb);
    }
    h = b4.apply(tape, h, emb);
    return head.apply(tape, tape.swish(head_norm.apply(tape, h)));
}

// ---- training ---------------------------------------------------------------

Denoiser train_diffusion(const std::vector<FusedLatent>& latents, const NoiseSchedule& sched,
                         const DenoiserConfig& cfg, int steps, int batch, double lr,
                         std::uint64_t seed, std::vector<double>* loss_log) {
    if (latents.empty()) throw DataError("train_diffusion: no latents");
    if (steps < 1 || batch < 1) throw ConfigError("train_diffusion: steps and batch must be >= 1");
    const auto& shape0 = latents.front().data.shape;
    for (const auto& z : latents)
        if (z.data.shape != shape0) throw DataError("train_diffusion: latent shapes differ");
    if (shape0[0] != cfg.channels || shape0[1] != cfg.h || shape0[2] != cfg.w)
        throw ConfigError(msg("train_diffusion: config grid (", cfg.channels, ",", cfg.h, ",",
                              cfg.w, ") does not match latents ",
                              TensorF::shape_str(shape0)));
    sched.validate();

    Denoiser den;
    den.init(cfg, seed);
    AdamState opt;
    opt.lr = lr;
    Rng rng(derive_seed(seed, "diff.train"));

    for (int stepi = 0; stepi < steps; ++stepi) {
        Tape tape;
        bind_params(tape, true, den);
        Tape::Id sum;
        for (int bi = 0; bi < batch; ++bi) {
            const FusedLatent& z0 = latents[rng.index(static_cast<std::int64_t>(latents.size()))];
            const int t = static_cast<int>(rng.index(sched.T));
            TensorF eps(z0.data.shape);
            for (auto& v : eps.data) v = static_cast<float>(rng.gaussian());
            TensorF zt = q_sample(z0.data, eps, sched, t);
            auto pred = den.apply(tape, tape.constant(std::move(zt), "zt"), t);
            auto li = tape.l2_loss(pred, tape.constant(std::move(eps), "eps"));
            sum = sum.valid() ? tape.add(sum, li) : li;
        }
        auto loss = tape.affine(sum, 1.f / static_cast<float>(batch), 0.f);
        const double lv = tape.scalar(loss);
        if (!std::isfinite(lv))
            throw NumericError(msg("train_diffusion: non-finite loss at step ", stepi));
        if (loss_log) loss_log->push_back(lv);
        tape.backward(loss);
        std::vector<TensorF*> params;
        std::vector<TensorF> grads;
        den.visit("d", [&](const std::string&, TensorF& v, Tape::Id& id) {
            params.push_back(&v);
            grads.push_back(tape.has_grad(id) ? tape.grad(id) : TensorF(v.shape));
        });
        opt.update(params, grads);
    }
    return den;
}

// ---- sampling ---------------------------------------------------------------

std::vector<FusedLatent> sample_diffusion(Denoiser& den, const NoiseSchedule& sched, int n,
                                          std::uint64_t seed, const LatentStats& stats,
                                          int split_index) {
    if (n < 1) throw ArgumentError("sample_diffusion: n must be >= 1");
    sched.validate();
    const int C = den.cfg.channels;
    if (static_cast<int>(stats.mu.size()) != C || static_cast<int>(stats.sigma.size()) != C)
        throw DimensionError(msg("sample_diffusion: stats carry ", stats.mu.size(),
                                 " channels, denoiser expects ", C));
    Rng rng(derive_seed(seed, "diff.sample"));
    std::vector<FusedLatent> out;
    const std::int64_t plane = static_cast<std::int64_t>(den.cfg.h) * den.cfg.w;

    for (int i = 0; i < n; ++i) {
        TensorF z({C, den.cfg.h, den.cfg.w});
        for (auto& v : z.data) v = static_cast<float>(rng.gaussian());
        for (int t = sched.T - 1; t >= 0; --t) {
            Tape tape;
            bind_params(tape, false, den);
            auto pred = den.apply(tape, tape.constant(z, "zt"), t);
            const TensorF& eps_hat = tape.val(pred);
            const double ab = sched.alpha_bar[t];
            const double ab_prev = t > 0 ? sched.alpha_bar[t - 1] : 1.0;
            const double coef = sched.beta[t] / std::sqrt(1.0 - ab);
            const double inv_sqrt_alpha = 1.0 / std::sqrt(sched.alpha[t]);
            const double sigma =
                t > 0 ? std::sqrt(sched.beta[t] * (1.0 - ab_prev) / (1.0 - ab)) : 0.0;
            for (std::int64_t k = 0; k < z.numel(); ++k) {
                double v = inv_sqrt_alpha * (z.data[k] - coef * eps_hat.data[k]);
                if (t > 0) v += sigma * rng.gaussian();
                z.data[k] = static_cast<float>(v);
            }
        }
        // De-standardize back to the model's latent scale.
        for (int c = 0; c < C; ++c)
            for (std::int64_t k = 0; k < plane; ++k)
                z.data[c * plane + k] = z.data[c * plane + k] * stats.sigma[c] + stats.mu[c];
        FusedLatent f;
        f.data = std::move(z);
        f.split_index = split_index;
        out.push_back(std::move(f));
    }
    return out;
}

std::vector<ImageTensor> generate_images(Denoiser& den, const NoiseSchedule& sched,
                                         FaVaeModel& model, const LatentStats& stats,
                                         int split_index, int n, std::uint64_t seed) {
    auto latents = sample_diffusion(den, sched, n, seed, stats, split_index);
    std::vector<ImageTensor> out;
    for (const FusedLatent& z : latents) {
        auto [z_low, z_high] = split(z);
        TensorF ll = decode_plain(model.low, z_low);
        TensorF packed = decode_plain(model.high, z_high);
        out.push_back(decode_subbands(ll, packed, model.norm, model.range));
    }
    return out;
}

// ---- persistence ------------------------------------------------------------

void save_denoiser(const std::string& path, Denoiser& den, const NoiseSchedule& sched,
                   const LatentStats& stats, int split_index) {
    NamedTensors t;
    t.add("diff.cfg", TensorF({5}, {static_cast<float>(den.cfg.channels),
                                    static_cast<float>(den.cfg.h), static_cast<float>(den.cfg.w),
                                    static_cast<float>(den.cfg.width),
                                    static_cast<float>(den.cfg.emb_dim)}));
    std::vector<float> betas(sched.beta.begin(), sched.beta.end());
    t.add("sched.beta", TensorF({sched.T}, betas));
    t.add("stats.mu", TensorF({static_cast<int>(stats.mu.size())}, stats.mu));
    t.add("stats.sigma", TensorF({static_cast<int>(stats.sigma.size())}, stats.sigma));
    t.add_scalar("meta.split", split_index);
    den.visit("den", [&](const std::string& name, TensorF& v, Tape::Id&) { t.add(name, v); });
    save_tensors(path, t);
}

DenoiserBundle load_denoiser(const std::string& path) {
    const NamedTensors t = load_tensors(path);
    const TensorF& c = t.get("diff.cfg");
    if (c.numel() != 5) throw DataError("denoiser file: malformed config");
    DenoiserBundle b;
    DenoiserConfig cfg;
    cfg.channels = static_cast<int>(c.data[0]);
    cfg.h = static_cast<int>(c.data[1]);
    cfg.w = static_cast<int>(c.data[2]);
    cfg.width = static_cast<int>(c.data[3]);
    cfg.emb_dim = static_cast<int>(c.data[4]);
    b.denoiser.init(cfg, 0);

    const TensorF& betas = t.get("sched.beta");
    b.schedule.T = betas.numel();
    b.schedule.beta.assign(betas.data.begin(), betas.data.end());
    b.schedule.alpha.resize(b.schedule.T);
    b.schedule.alpha_bar.resize(b.schedule.T);
    double prod = 1.0;
    for (int i = 0; i < b.schedule.T; ++i) {
        b.schedule.alpha[i] = 1.0 - b.schedule.beta[i];
        prod *= b.schedule.alpha[i];
        b.schedule.alpha_bar[i] = prod;
    }
    b.schedule.validate();

    b.stats.mu = t.get("stats.mu").data;
    b.stats.sigma = t.get("stats.sigma").data;
    b.split_index = static_cast<int>(t.get_scalar("meta.split"));
    b.denoiser.visit("den", [&](const std::string& name, TensorF& v, Tape::Id&) {
        const TensorF& src = t.get(name);
        if (!src.same_shape(v))
            throw DataError(msg("denoiser file: tensor '", name, "' shape ", src.shape_str(),
                                " does not match model ", v.shape_str()));
        v = src;
    });
    return b;
}

}  // namespace favae
