#include "favae/fusion.hpp"

#include <cmath>

#include "favae/train.hpp"

namespace favae {

FusedLatent fuse(const TensorF& z_low, const TensorF& z_high) {
    if (z_low.rank() != 3 || z_high.rank() != 3)
        throw DimensionError(msg("fuse: latents must be (c,h,w), got ", z_low.shape_str(), " and ",
                                 z_high.shape_str()));
    if (z_low.shape[1] != z_high.shape[1] || z_low.shape[2] != z_high.shape[2])
        throw DimensionError(msg("fuse: spatial grids must align, got ", z_low.shape_str(),
                                 " vs ", z_high.shape_str()));
    FusedLatent out;
    out.split_index = z_low.shape[0];
    out.data = TensorF({z_low.shape[0] + z_high.shape[0], z_low.shape[1], z_low.shape[2]});
    std::copy(z_low.data.begin(), z_low.data.end(), out.data.data.begin());
    std::copy(z_high.data.begin(), z_high.data.end(), out.data.data.begin() + z_low.numel());
    return out;
}

std::pair<TensorF, TensorF> split(const FusedLatent& z) {
    if (z.data.rank() != 3 || z.split_index < 1 || z.split_index >= z.data.shape[0])
        throw DimensionError(msg("split: bad fused latent ", z.data.shape_str(),
                                 " with split index ", z.split_index));
    const int h = z.data.shape[1], w = z.data.shape[2];
    TensorF lo({z.split_index, h, w});
    TensorF hi({z.data.shape[0] - z.split_index, h, w});
    std::copy(z.data.data.begin(), z.data.data.begin() + lo.numel(), lo.data.begin());
    std::copy(z.data.data.begin() + lo.numel(), z.data.data.end(), hi.data.begin());
    return {std::move(lo), std::move(hi)};
}

ExtractedLatents extract_latents(const std::vector<ImageTensor>& dataset, FaVaeModel& model) {
    validate_dataset(dataset);
    const auto& shape0 = dataset.front().data.shape;
    for (const auto& img : dataset)
        if (img.data.shape != shape0)
            throw DataError("extract_latents: dataset images must share one shape");

    ExtractedLatents out;
    for (const ImageTensor& img : dataset) {
        auto [low_in, high_in] = branch_inputs(img, model.norm.scheme);
        TensorF z_low = encode_mean(model.low, low_in);
        TensorF z_high = encode_mean(model.high, high_in);
        out.latents.push_back(fuse(z_low, z_high));
    }
    out.split_index = out.latents.front().split_index;

    const int C = out.latents.front().data.shape[0];
    const std::int64_t plane = out.latents.front().data.numel() / C;
    const double n = static_cast<double>(plane) * out.latents.size();
    std::vector<double> mu(C, 0.0), var(C, 0.0);
    for (const auto& z : out.latents)
        for (int c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < plane; ++i) mu[c] += z.data.data[c * plane + i];
    for (auto& m : mu) m /= n;
    for (const auto& z : out.latents)
        for (int c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < plane; ++i) {
                const double d = z.data.data[c * plane + i] - mu[c];
                var[c] += d * d;
            }
    out.stats.mu.resize(C);
    out.stats.sigma.resize(C);
    for (int c = 0; c < C; ++c) {
        out.stats.mu[c] = static_cast<float>(mu[c]);
        out.stats.sigma[c] = static_cast<float>(std::max(std::sqrt(var[c] / n), 1e-6));
    }
    for (auto& z : out.latents)
        for (int c = 0; c < C; ++c)
            for (std::int64_t i = 0; i < plane; ++i)
                z.data.data[c * plane + i] =
                    (z.data.data[c * plane + i] - out.stats.mu[c]) / out.stats.sigma[c];
    return out;
}

void save_latents(const std::string& path, const ExtractedLatents& l) {
    NamedTensors t;
    t.add_scalar("meta.count", static_cast<double>(l.latents.size()));
    t.add_scalar("meta.split", l.split_index);
    t.add("stats.mu", TensorF({static_cast<int>(l.stats.mu.size())}, l.stats.mu));
    t.add("stats.sigma", TensorF({static_cast<int>(l.stats.sigma.size())}, l.stats.sigma));
    char name[32];
    for (size_t i = 0; i < l.latents.size(); ++i) {
        std::snprintf(name, sizeof(name), "z.%06zu", i);
        t.add(name, l.latents[i].data);
    }
    save_tensors(path, t);
}

ExtractedLatents load_latents(const std::string& path) {
    const NamedTensors t = load_tensors(path);
    ExtractedLatents out;
    const int count = static_cast<int>(t.get_scalar("meta.count"));
    out.split_index = static_cast<int>(t.get_scalar("meta.split"));
    out.stats.mu = t.get("stats.mu").data;
    out.stats.sigma = t.get("stats.sigma").data;
    char name[32];
    for (int i = 0; i < count; ++i) {
        std::snprintf(name, sizeof(name), "z.%06d", i);
        FusedLatent z;
        z.data = t.get(name);
        z.split_index = out.split_index;
        out.latents.push_back(std::move(z));
    }
    if (out.latents.empty()) throw DataError("latent cache holds no latents");
    return out;
}

}  // namespace favae
