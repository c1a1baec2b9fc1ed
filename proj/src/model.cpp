#include "favae/model.hpp"

#include <cmath>

namespace favae {

namespace {

TensorF kaiming_uniform(std::vector<int> shape, std::int64_t fan_in, Rng& rng) {
    TensorF t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}

int norm_groups(int channels) {
    int g = std::min(8, channels);
    while (channels % g != 0) --g;
    return g;
}

}  // namespace

// ---- layers -----------------------------------------------------------------

void Conv2dLayer::init(int in_ch, int out_ch, int kernel, int stride_, Pad pad_, Rng& rng) {
    in = in_ch;
    out = out_ch;
    k = kernel;
    stride = stride_;
    pad = pad_;
    w = kaiming_uniform({out, in, k, k}, static_cast<std::int64_t>(in) * k * k, rng);
    b = TensorF({out});
}

void Conv2dLayer::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".w", w, w_id);
    fn(prefix + ".b", b, b_id);
}

Tape::Id Conv2dLayer::apply(Tape& tape, Tape::Id x) const {
    return tape.conv2d(x, w_id, b_id, stride, pad);
}

void GroupNormLayer::init(int ch) {
    channels = ch;
    groups = norm_groups(ch);
    gain = TensorF::full({ch}, 1.f);
    bias = TensorF({ch});
}

void GroupNormLayer::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".gain", gain, gain_id);
    fn(prefix + ".bias", bias, bias_id);
}

Tape::Id GroupNormLayer::apply(Tape& tape, Tape::Id x) const {
    return tape.group_norm(x, gain_id, bias_id, groups);
}

void LinearLayer::init(int in_dim, int out_dim, Rng& rng) {
    in = in_dim;
    out = out_dim;
    w = kaiming_uniform({out, in}, in, rng);
    b = TensorF({out});
}

void LinearLayer::visit(const std::string& prefix, const ParamVisitor& fn) {
    fn(prefix + ".w", w, w_id);
    fn(prefix + ".b", b, b_id);
}

Tape::Id LinearLayer::apply(Tape& tape, Tape::Id x) const {
    return tape.linear(x, w_id, b_id);
}

void ResBlock::init(int ch, Rng& rng) {
    gn1.init(ch);
    conv1.init(ch, ch, 3, 1, Pad::same, rng);
    gn2.init(ch);
    conv2.init(ch, ch, 3, 1, Pad::same, rng);
}

void ResBlock::visit(const std::string& prefix, const ParamVisitor& fn) {
    gn1.visit(prefix + ".gn1", fn);
    conv1.visit(prefix + ".conv1", fn);
    gn2.visit(prefix + ".gn2", fn);
    conv2.visit(prefix + ".conv2", fn);
}

Tape::Id ResBlock::apply(Tape& tape, Tape::Id x) const {
    auto h = conv1.apply(tape, tape.swish(gn1.apply(tape, x)));
    h = conv2.apply(tape, tape.swish(gn2.apply(tape, h)));
    return tape.add(x, h);
}

// ---- branch configuration -----------------------------------------------------

int BranchConfig::width_at(int stage) const {
    const int mult = std::min(1 << stage, 4);
    return base * mult;
}

void BranchConfig::validate() const {
    if (in_ch < 1) throw ConfigError(msg("branch: in_ch must be >= 1, got ", in_ch));
    if (base < 1) throw ConfigError(msg("branch: base width must be >= 1, got ", base));
    if (stages < 1 || stages > 6)
        throw ConfigError(msg("branch: stages must be in [1,6], got ", stages));
    if (blocks_per_stage < 1)
        throw ConfigError(msg("branch: blocks_per_stage must be >= 1, got ", blocks_per_stage));
    if (latent_ch < 1) throw ConfigError(msg("branch: latent_ch must be >= 1, got ", latent_ch));
    if (beta < 0) throw ConfigError("branch: beta must be >= 0");
    if (lambda_vf < 0 || lambda_gan < 0 || lambda_lpips < 0)
        throw ConfigError("branch: loss weights must be >= 0");
}

// ---- encoder ---------------------------------------------------------------

void Encoder::init(const BranchConfig& c, Rng& rng) {
    cfg = c;
    stem.init(c.in_ch, c.width_at(0), 3, 1, Pad::same, rng);
    blocks.clear();
    downs.clear();
    for (int s = 0; s < c.stages; ++s) {
        for (int b = 0; b < c.blocks_per_stage; ++b) {
            blocks.emplace_back();
            blocks.back().init(c.width_at(s), rng);
        }
        downs.emplace_back();
        downs.back().init(c.width_at(s), c.width_at(s + 1), 3, 2, Pad::same, rng);
    }
    mid.init(c.width_at(c.stages), rng);
    head_norm.init(c.width_at(c.stages));
    head.init(c.width_at(c.stages), 2 * c.latent_ch, 3, 1, Pad::same, rng);
}

void Encoder::visit(const std::string& p, const ParamVisitor& fn) {
    stem.visit(p + ".stem", fn);
    for (size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(p + ".block" + std::to_string(i), fn);
    for (size_t i = 0; i < downs.size(); ++i) downs[i].visit(p + ".down" + std::to_string(i), fn);
    mid.visit(p + ".mid", fn);
    head_norm.visit(p + ".head_norm", fn);
    head.visit(p + ".head", fn);
}

DiagGaussianLatent Encoder::apply(Tape& tape, Tape::Id x) const {
    const TensorF& xv = tape.val(x);
    const int f = cfg.spatial_factor();
    if (xv.shape[0] != cfg.in_ch)
        throw DimensionError(msg("encode: expected ", cfg.in_ch, " channels, got ",
                                 xv.shape_str()));
    if (xv.shape[1] % f != 0 || xv.shape[2] % f != 0)
        throw DimensionError(msg("encode: spatial dims of ", xv.shape_str(),
                                 " must be divisible by the branch factor ", f));
    auto h = stem.apply(tape, x);
    int bi = 0;
    for (int s = 0; s < cfg.stages; ++s) {
        for (int b = 0; b < cfg.blocks_per_stage; ++b) h = blocks[bi++].apply(tape, h);
        h = downs[s].apply(tape, h);
    }
    h = mid.apply(tape, h);
    h = head.apply(tape, tape.swish(head_norm.apply(tape, h)));
    DiagGaussianLatent lat;
    lat.mean = tape.slice_channels(h, 0, cfg.latent_ch);
    lat.logvar = tape.clamp(tape.slice_channels(h, cfg.latent_ch, 2 * cfg.latent_ch), kLogVarMin,
                            kLogVarMax);
    return lat;
}

// ---- decoder ---------------------------------------------------------------

void Decoder::init(const BranchConfig& c, Rng& rng) {
    cfg = c;
    stem.init(c.latent_ch, c.width_at(c.stages), 3, 1, Pad::same, rng);
    mid.init(c.width_at(c.stages), rng);
    ups.clear();
    blocks.clear();
    for (int s = c.stages - 1; s >= 0; --s) {
        ups.emplace_back();
        ups.back().init(c.width_at(s + 1), c.width_at(s), 3, 1, Pad::same, rng);
        for (int b = 0; b < c.blocks_per_stage; ++b) {
            blocks.emplace_back();
            blocks.back().init(c.width_at(s), rng);
        }
    }
    head_norm.init(c.width_at(0));
    head.init(c.width_at(0), c.in_ch, 3, 1, Pad::same, rng);
}

void Decoder::visit(const std::string& p, const ParamVisitor& fn) {
    stem.visit(p + ".stem", fn);
    mid.visit(p + ".mid", fn);
    for (size_t i = 0; i < ups.size(); ++i) ups[i].visit(p + ".up" + std::to_string(i), fn);
    for (size_t i = 0; i < blocks.size(); ++i) blocks[i].visit(p + ".block" + std::to_string(i), fn);
    head_norm.visit(p + ".head_norm", fn);
    head.visit(p + ".head", fn);
}

Tape::Id Decoder::apply(Tape& tape, Tape::Id z) const {
    const TensorF& zv = tape.val(z);
    if (zv.shape[0] != cfg.latent_ch)
        throw DimensionError(msg("decode: expected ", cfg.latent_ch, " latent channels, got ",
                                 zv.shape_str()));
    auto h = stem.apply(tape, z);
    h = mid.apply(tape, h);
    int bi = 0;
    for (size_t s = 0; s < ups.size(); ++s) {
        h = ups[s].apply(tape, tape.nearest_upsample2x(h));
        for (int b = 0; b < cfg.blocks_per_stage; ++b) h = blocks[bi++].apply(tape, h);
    }
    h = head.apply(tape, tape.swish(head_norm.apply(tape, h)));
    return tape.tanh_act(h);
}

// ---- discriminator ------------------------------------------------------------

void Discriminator::init(int in_ch, int base, Rng& rng) {
    convs.assign(4, Conv2dLayer{});
    convs[0].init(in_ch, base, 3, 2, Pad::same, rng);
    convs[1].init(base, 2 * base, 3, 2, Pad::same, rng);
    convs[2].init(2 * base, 4 * base, 3, 2, Pad::same, rng);
    convs[3].init(4 * base, 1, 3, 2, Pad::same, rng);
}

void Discriminator::visit(const std::string& p, const ParamVisitor& fn) {
    for (size_t i = 0; i < convs.size(); ++i) convs[i].visit(p + ".conv" + std::to_string(i), fn);
}

void Discriminator::bind(Tape& tape, bool train) { bind_params(tape, train, *this); }

Tape::Id Discriminator::apply(Tape& tape, Tape::Id x) const {
    auto h = x;
    for (size_t i = 0; i < convs.size(); ++i) {
        h = convs[i].apply(tape, h);
        if (i + 1 < convs.size()) h = tape.leaky_relu(h);
    }
    return h;  // 1-channel logit map
}

// ---- branch ---------------------------------------------------------------

void Branch::init(const BranchConfig& c, std::uint64_t seed, int vf_feat_ch) {
    c.validate();
    cfg = c;
    Rng enc_rng(derive_seed(seed, "enc"));
    Rng dec_rng(derive_seed(seed, "dec"));
    Rng disc_rng(derive_seed(seed, "disc"));
    enc.init(c, enc_rng);
    dec.init(c, dec_rng);
    disc.init(c.in_ch, c.disc_base, disc_rng);
    if (vf_feat_ch > 0) {
        Rng proj_rng(derive_seed(seed, "vf_proj"));
        vf_proj.emplace();
        vf_proj->init(vf_feat_ch, c.latent_ch, 1, 1, Pad::same, proj_rng);
    } else {
        vf_proj.reset();
    }
}

void Branch::visit_generator(const std::string& p, const ParamVisitor& fn) {
    enc.visit(p + ".enc", fn);
    dec.visit(p + ".dec", fn);
    if (vf_proj) vf_proj->visit(p + ".vf_proj", fn);
}

void Branch::visit_discriminator(const std::string& p, const ParamVisitor& fn) {
    disc.visit(p + ".disc", fn);
}

void Branch::bind_generator(Tape& tape, bool train) {
    visit_generator("g", [&](const std::string&, TensorF& v, Tape::Id& id) {
        id = tape.leaf(v, train, "param");
    });
}

std::int64_t Branch::param_count() {
    std::int64_t n = 0;
    auto count = [&](const std::string&, TensorF& v, Tape::Id&) { n += v.numel(); };
    visit_generator("g", count);
    visit_discriminator("d", count);
    return n;
}

// ---- model ---------------------------------------------------------------

void FaVaeModel::visit(const ParamVisitor& fn) {
    low.visit_generator("low", fn);
    low.visit_discriminator("low", fn);
    high.visit_generator("high", fn);
    high.visit_discriminator("high", fn);
}

ParamList FaVaeModel::params() {
    ParamList out;
    visit([&](const std::string& name, TensorF& v, Tape::Id&) { out.emplace_back(name, &v); });
    return out;
}

FaVaeModel make_favae_model(const BranchConfig& low_cfg, const BranchConfig& high_cfg,
                            ValueRange range, NormParams::Scheme scheme, std::uint64_t seed,
                            FeatureProviderPtr provider) {
    if (high_cfg.in_ch != 3 * low_cfg.in_ch)
        throw ConfigError(msg("high branch must take 3x the low branch channels (detail "
                              "packing): got ", high_cfg.in_ch, " vs low ", low_cfg.in_ch));
    if (low_cfg.stages != high_cfg.stages)
        throw ConfigError("both branches must share the spatial factor so fused latents align");
    if ((low_cfg.lambda_vf > 0 || low_cfg.lambda_lpips > 0) && !provider)
        throw ConfigError("low branch feature losses need a feature provider");
    FaVaeModel m;
    m.range = range;
    m.norm = make_norm_params(scheme, range);
    m.provider = std::move(provider);
    int vf_ch = 0;
    if (low_cfg.lambda_vf > 0) vf_ch = m.provider->stage_channels(low_cfg.in_ch).back();
    m.low.init(low_cfg, derive_seed(seed, "branch.low"), vf_ch);
    m.high.init(high_cfg, derive_seed(seed, "branch.high"), 0);
    return m;
}

CoupledVaeModel make_coupled_model(const BranchConfig& cfg, ValueRange range,
                                   NormParams::Scheme scheme, std::uint64_t seed) {
    CoupledVaeModel m;
    m.range = range;
    m.norm = make_norm_params(scheme, range);
    m.body.init(cfg, derive_seed(seed, "branch.coupled"), 0);
    return m;
}

// ---- encode / decode / reconstruct -----------------------------------------

DiagGaussianLatent encode(Tape& tape, Branch& branch, Tape::Id x, bool train) {
    bind_params(tape, train, branch.enc);
    return branch.enc.apply(tape, x);
}

Tape::Id decode(Tape& tape, Branch& branch, Tape::Id z, bool train) {
    bind_params(tape, train, branch.dec);
    return branch.dec.apply(tape, z);
}

TensorF encode_mean(Branch& branch, const TensorF& x) {
    Tape tape;
    auto in = tape.constant(x, "x");
    DiagGaussianLatent lat = encode(tape, branch, in, false);
    return tape.val(lat.mean);
}

TensorF decode_plain(Branch& branch, const TensorF& z) {
    Tape tape;
    auto in = tape.constant(z, "z");
    return tape.val(decode(tape, branch, in, false));
}

std::pair<TensorF, TensorF> branch_inputs(const ImageTensor& x, NormParams::Scheme scheme) {
    SubbandSet s = normalize_subbands(dwt2_haar(x), scheme);
    return {s.ll, pack_high(s)};
}

ImageTensor decode_subbands(const TensorF& ll_norm, const TensorF& packed_norm,
                            const NormParams& norm, ValueRange range) {
    SubbandSet s = unpack_high(packed_norm, range);
    s.ll = ll_norm;
    s.norm_state = norm;
    ImageTensor out = idwt2_haar(denormalize_subbands(s));
    const float lo = static_cast<float>(range_lo(range));
    const float hi = static_cast<float>(range_hi(range));
    for (auto& v : out.data.data) v = std::min(hi, std::max(lo, v));
    return out;
}

ImageTensor reconstruct(const ImageTensor& x, FaVaeModel& model, const ReconstructHooks& hooks) {
    auto [low_in, high_in] = branch_inputs(x, model.norm.scheme);
    TensorF low_out =
        hooks.identity_low ? low_in : decode_plain(model.low, encode_mean(model.low, low_in));
    TensorF high_out =
        hooks.identity_high ? high_in : decode_plain(model.high, encode_mean(model.high, high_in));
    return decode_subbands(low_out, high_out, model.norm, model.range);
}

ImageTensor reconstruct_coupled(const ImageTensor& x, CoupledVaeModel& model) {
    auto [low_in, high_in] = branch_inputs(x, model.norm.scheme);
    const int cl = low_in.shape[0];
    TensorF stacked({cl + high_in.shape[0], low_in.shape[1], low_in.shape[2]});
    std::copy(low_in.data.begin(), low_in.data.end(), stacked.data.begin());
    std::copy(high_in.data.begin(), high_in.data.end(), stacked.data.begin() + low_in.numel());

    TensorF out = decode_plain(model.body, encode_mean(model.body, stacked));
    TensorF ll_part({cl, low_in.shape[1], low_in.shape[2]});
    TensorF high_part({high_in.shape[0], low_in.shape[1], low_in.shape[2]});
    std::copy(out.data.begin(), out.data.begin() + ll_part.numel(), ll_part.data.begin());
    std::copy(out.data.begin() + ll_part.numel(), out.data.end(), high_part.data.begin());
    return decode_subbands(ll_part, high_part, model.norm, model.range);
}

// ---- checkpoints ------------------------------------------------------------

namespace {

TensorF config_tensor(const BranchConfig& c) {
    return TensorF({11}, {static_cast<float>(c.in_ch), static_cast<float>(c.base),
                          static_cast<float>(c.stages), static_cast<float>(c.blocks_per_stage),
                          static_cast<float>(c.latent_ch), static_cast<float>(c.disc_base),
                          static_cast<float>(c.beta), static_cast<float>(c.lambda_vf),
                          static_cast<float>(c.lambda_gan), static_cast<float>(c.lambda_lpips),
                          c.l1_rec ? 1.f : 0.f});
}

BranchConfig config_from_tensor(const TensorF& t) {
    if (t.numel() != 11) throw DataError("checkpoint: malformed branch config tensor");
    BranchConfig c;
    c.in_ch = static_cast<int>(t.data[0]);
    c.base = static_cast<int>(t.data[1]);
    c.stages = static_cast<int>(t.data[2]);
    c.blocks_per_stage = static_cast<int>(t.data[3]);
    c.latent_ch = static_cast<int>(t.data[4]);
    c.disc_base = static_cast<int>(t.data[5]);
    c.beta = t.data[6];
    c.lambda_vf = t.data[7];
    c.lambda_gan = t.data[8];
    c.lambda_lpips = t.data[9];
    c.l1_rec = t.data[10] != 0.f;
    return c;
}

}  // namespace

NamedTensors favae_to_tensors(FaVaeModel& model) {
    NamedTensors t;
    t.add_scalar("cfg.version", 1.0);
    t.add("cfg.low", config_tensor(model.low.cfg));
    t.add("cfg.high", config_tensor(model.high.cfg));
    t.add_scalar("cfg.range", model.range == ValueRange::unit ? 0.0 : 1.0);
    t.add_scalar("cfg.scheme", model.norm.scheme == NormParams::Scheme::none ? 0.0 : 1.0);
    t.add_scalar("cfg.vf_feat_ch", model.low.vf_proj ? model.low.vf_proj->in : 0);
    t.add("norm.scale", TensorF({4}, {model.norm.scale[0], model.norm.scale[1],
                                      model.norm.scale[2], model.norm.scale[3]}));
    t.add("norm.offset", TensorF({4}, {model.norm.offset[0], model.norm.offset[1],
                                       model.norm.offset[2], model.norm.offset[3]}));
    model.visit([&](const std::string& name, TensorF& v, Tape::Id&) { t.add(name, v); });
    return t;
}

FaVaeModel favae_from_tensors(const NamedTensors& t, FeatureProviderPtr provider) {
    if (static_cast<int>(t.get_scalar("cfg.version")) != 1)
        throw DataError("checkpoint: unsupported version");
    BranchConfig low_cfg = config_from_tensor(t.get("cfg.low"));
    BranchConfig high_cfg = config_from_tensor(t.get("cfg.high"));
    const ValueRange range =
        t.get_scalar("cfg.range") == 0.0 ? ValueRange::unit : ValueRange::symmetric;
    const auto scheme = t.get_scalar("cfg.scheme") == 0.0 ? NormParams::Scheme::none
                                                          : NormParams::Scheme::affine_per_subband;
    FaVaeModel m;
    m.range = range;
    m.norm = make_norm_params(scheme, range);
    m.provider = std::move(provider);
    const int vf_ch = static_cast<int>(t.get_scalar("cfg.vf_feat_ch"));
    m.low.init(low_cfg, 0, vf_ch);
    m.high.init(high_cfg, 0, 0);

    const TensorF& scale = t.get("norm.scale");
    const TensorF& offset = t.get("norm.offset");
    for (int i = 0; i < 4; ++i) {
        m.norm.scale[i] = scale.data[i];
        m.norm.offset[i] = offset.data[i];
    }

    m.visit([&](const std::string& name, TensorF& v, Tape::Id&) {
        const TensorF& src = t.get(name);
        if (!src.same_shape(v))
            throw DataError(msg("checkpoint: tensor '", name, "' has shape ", src.shape_str(),
                                ", model expects ", v.shape_str()));
        v = src;
    });
    return m;
}

void save_favae(const std::string& path, FaVaeModel& model) {
    save_tensors(path, favae_to_tensors(model));
}

FaVaeModel load_favae(const std::string& path, FeatureProviderPtr provider) {
    return favae_from_tensors(load_tensors(path), std::move(provider));
}

}  // namespace favae
