#include "favae/losses.hpp"

#include <cstdio>

namespace favae {

std::string loss_log_header() { return "step,branch,total,rec,kl,vf,gan_g,gan_d,lpips_proxy\n"; }

std::string loss_log_line(const LossBreakdown& b) {
    char buf[256];
    std::snprintf(buf, sizeof(buf), "%d,%s,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g,%.9g\n", b.step,
                  b.branch.c_str(), b.total, b.rec, b.kl, b.vf, b.gan_g, b.gan_d, b.lpips_proxy);
    return buf;
}

namespace {

// Unit-normalizes channel vectors per position: f / sqrt(sum_c f^2 + eps).
Tape::Id unit_normalize_channels(Tape& tape, Tape::Id f) {
    auto n2 = tape.sum_channels(tape.mul(f, f));
    auto n = tape.sqrt_op(tape.affine(n2, 1.f, 1e-12f));
    return tape.div(f, n);
}

// Cosine similarity per position between two (c, n) grids -> (1, n).
Tape::Id cosine_rows(Tape& tape, Tape::Id a, Tape::Id b) {
    auto dot = tape.sum_channels(tape.mul(a, b));
    auto na = tape.sqrt_op(tape.affine(tape.sum_channels(tape.mul(a, a)), 1.f, 1e-12f));
    auto nb = tape.sqrt_op(tape.affine(tape.sum_channels(tape.mul(b, b)), 1.f, 1e-12f));
    return tape.div(tape.div(dot, na), nb);
}

}  // namespace

Tape::Id vf_alignment_loss(Tape& tape, Tape::Id z, Tape::Id feats_projected, double m1, double m2,
                           double w_hyper, const std::vector<int>& pair_positions) {
    const TensorF& zv = tape.val(z);
    const TensorF& fv = tape.val(feats_projected);
    if (!zv.same_shape(fv))
        throw DimensionError(msg("vf_alignment_loss: latent ", zv.shape_str(),
                                 " vs projected features ", fv.shape_str()));
    if (zv.rank() != 3)
        throw DimensionError(msg("vf_alignment_loss: need (c,h,w), got ", zv.shape_str()));
    const int c = zv.shape[0];
    const int hw = zv.shape[1] * zv.shape[2];

    auto z2 = tape.reshape(z, {c, hw});
    auto f2 = tape.reshape(feats_projected, {c, hw});

    auto cos = cosine_rows(tape, z2, f2);
    auto term1 = tape.mean_reduce(
        tape.relu(tape.affine(cos, -1.f, static_cast<float>(1.0 - m1))));

    if (pair_positions.empty() || w_hyper == 0.0) return term1;

    auto zs = unit_normalize_channels(tape, tape.gather_positions(z2, pair_positions));
    auto fs = unit_normalize_channels(tape, tape.gather_positions(f2, pair_positions));
    auto mz = tape.matmul(tape.transpose(zs), zs);
    auto mf = tape.matmul(tape.transpose(fs), fs);
    auto diff = tape.abs_op(tape.sub(mz, mf));
    auto term2 = tape.mean_reduce(
        tape.relu(tape.affine(diff, 1.f, static_cast<float>(-m2))));
    return tape.add(term1, tape.affine(term2, static_cast<float>(w_hyper), 0.f));
}

GanLossIds gan_losses(Tape& tape, Discriminator& disc, Tape::Id real, Tape::Id fake,
                      bool disc_train) {
    if (!tape.val(real).same_shape(tape.val(fake)))
        throw DimensionError(msg("gan_losses: real ", tape.val(real).shape_str(), " vs fake ",
                                 tape.val(fake).shape_str()));
    disc.bind(tape, disc_train);
    auto d_real = disc.apply(tape, real);
    auto d_fake_det = disc.apply(tape, tape.detach(fake));
    auto d_fake = disc.apply(tape, fake);

    GanLossIds out;
    auto d_term_real = tape.mean_reduce(tape.relu(tape.affine(d_real, -1.f, 1.f)));
    auto d_term_fake = tape.mean_reduce(tape.relu(tape.affine(d_fake_det, 1.f, 1.f)));
    out.gan_d = tape.add(d_term_real, d_term_fake);
    out.gan_g = tape.affine(tape.mean_reduce(d_fake), -1.f, 0.f);
    return out;
}

Tape::Id perceptual_proxy(Tape& tape, Tape::Id x, Tape::Id xhat,
                          const FeatureProvider& provider) {
    if (!tape.val(x).same_shape(tape.val(xhat)))
        throw DimensionError(msg("perceptual_proxy: ", tape.val(x).shape_str(), " vs ",
                                 tape.val(xhat).shape_str()));
    auto sx = provider.stages_in_graph(tape, x);
    auto sh = provider.stages_in_graph(tape, xhat);
    if (sx.size() != sh.size()) throw DataError("perceptual_proxy: stage count mismatch");
    Tape::Id acc;
    for (size_t i = 0; i < sx.size(); ++i) {
        auto d = tape.l2_loss(unit_normalize_channels(tape, sx[i]),
                              unit_normalize_channels(tape, sh[i]));
        acc = (i == 0) ? d : tape.add(acc, d);
    }
    return tape.affine(acc, 1.f / static_cast<float>(sx.size()), 0.f);
}

LossBreakdown BranchLossGraph::read(const Tape& tape, const BranchConfig& cfg,
                                    double gan_scale) const {
    LossBreakdown b;
    b.rec = tape.scalar(rec);
    b.kl = tape.scalar(kl);
    if (vf.valid()) b.vf = tape.scalar(vf);
    if (gan_g.valid()) b.gan_g = tape.scalar(gan_g);
    if (lpips.valid()) b.lpips_proxy = tape.scalar(lpips);
    b.total = tape.scalar(total);
    (void)cfg;
    (void)gan_scale;
    return b;
}

BranchLossGraph branch_generator_loss(Tape& tape, Branch& branch,
                                      const FeatureProviderPtr& provider,
                                      const std::vector<const TensorF*>& batch, double gan_scale,
                                      Rng& eps_rng, Rng& vf_rng, bool train) {
    if (batch.empty()) throw DataError("branch loss: empty batch");
    const BranchConfig& cfg = branch.cfg;
    const bool use_vf = cfg.lambda_vf > 0;
    const bool use_gan = cfg.lambda_gan > 0 && gan_scale > 0;
    const bool use_lpips = cfg.lambda_lpips > 0;
    if ((use_vf || use_lpips) && !provider)
        throw ConfigError("branch loss: feature term enabled but no provider configured");
    if (use_lpips && !provider->supports_graph())
        throw ConfigError("branch loss: perceptual proxy needs an in-graph feature provider");

    branch.bind_generator(tape, train);
    if (use_gan) branch.disc.bind(tape, false);  // frozen inside the generator pass

    BranchLossGraph g;
    Tape::Id rec_sum, kl_sum, vf_sum, gan_sum, lpips_sum;
    for (size_t i = 0; i < batch.size(); ++i) {
        auto x = tape.constant(*batch[i], "x");
        DiagGaussianLatent lat = branch.enc.apply(tape, x);
        reparameterize(tape, lat, eps_rng);
        auto xhat = branch.dec.apply(tape, lat.sample);
        g.latents.push_back(lat);
        g.recons.push_back(xhat);

        auto rec_i = cfg.l1_rec ? tape.l1_loss(x, xhat) : tape.l2_loss(x, xhat);
        auto kl_i = tape.kl_diag_gaussian(lat.mean, lat.logvar);
        rec_sum = i == 0 ? rec_i : tape.add(rec_sum, rec_i);
        kl_sum = i == 0 ? kl_i : tape.add(kl_sum, kl_i);

        if (use_vf) {
            const TensorF& mv = tape.val(lat.mean);
            TensorF feats = provider->stages_plain(*batch[i], "").back();
            feats = nearest_resize(feats, mv.shape[1], mv.shape[2]);
            auto f_id = tape.constant(std::move(feats), "vf_feats");
            auto f_proj = branch.vf_proj->apply(tape, f_id);
            // Deterministic subsample of latent positions for the pairwise term.
            const int hw = mv.shape[1] * mv.shape[2];
            const int S = std::min(hw, 16);
            std::vector<int> pos(hw);
            for (int p = 0; p < hw; ++p) pos[p] = p;
            vf_rng.shuffle(pos.begin(), pos.end());
            pos.resize(S);
            auto vf_i = vf_alignment_loss(tape, lat.sample, f_proj, kVfM1, kVfM2, kVfWHyper, pos);
            vf_sum = vf_sum.valid() ? tape.add(vf_sum, vf_i) : vf_i;
        }
        if (use_gan) {
            auto d_fake = branch.disc.apply(tape, xhat);
            auto gan_i = tape.affine(tape.mean_reduce(d_fake), -1.f, 0.f);
            gan_sum = gan_sum.valid() ? tape.add(gan_sum, gan_i) : gan_i;
        }
        if (use_lpips) {
            auto lp_i = perceptual_proxy(tape, x, xhat, *provider);
            lpips_sum = lpips_sum.valid() ? tape.add(lpips_sum, lp_i) : lp_i;
        }
    }

    const float inv_b = 1.f / static_cast<float>(batch.size());
    g.rec = tape.affine(rec_sum, inv_b, 0.f);
    g.kl = tape.affine(kl_sum, inv_b, 0.f);
    if (vf_sum.valid()) g.vf = tape.affine(vf_sum, inv_b, 0.f);
    if (gan_sum.valid()) g.gan_g = tape.affine(gan_sum, inv_b, 0.f);
    if (lpips_sum.valid()) g.lpips = tape.affine(lpips_sum, inv_b, 0.f);

    g.total = tape.add(g.rec, tape.affine(g.kl, static_cast<float>(cfg.beta), 0.f));
    if (g.vf.valid())
        g.total = tape.add(g.total, tape.affine(g.vf, static_cast<float>(cfg.lambda_vf), 0.f));
    if (g.gan_g.valid())
        g.total = tape.add(
            g.total, tape.affine(g.gan_g, static_cast<float>(cfg.lambda_gan * gan_scale), 0.f));
    if (g.lpips.valid())
        g.total = tape.add(g.total,
                           tape.affine(g.lpips, static_cast<float>(cfg.lambda_lpips), 0.f));
    return g;
}

Tape::Id branch_discriminator_loss(Tape& tape, Branch& branch,
                                   const std::vector<const TensorF*>& real_batch,
                                   const std::vector<TensorF>& fake_batch) {
    if (real_batch.size() != fake_batch.size() || real_batch.empty())
        throw DataError("discriminator loss: empty or mismatched batches");
    branch.disc.bind(tape, true);
    Tape::Id sum;
    for (size_t i = 0; i < real_batch.size(); ++i) {
        auto real = tape.constant(*real_batch[i], "real");
        auto fake = tape.constant(fake_batch[i], "fake");
        auto d_real = branch.disc.apply(tape, real);
        auto d_fake = branch.disc.apply(tape, fake);
        auto term = tape.add(tape.mean_reduce(tape.relu(tape.affine(d_real, -1.f, 1.f))),
                             tape.mean_reduce(tape.relu(tape.affine(d_fake, 1.f, 1.f))));
        sum = sum.valid() ? tape.add(sum, term) : term;
    }
    return tape.affine(sum, 1.f / static_cast<float>(real_batch.size()), 0.f);
}

}  // namespace favae
