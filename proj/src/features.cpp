#include "favae/features.hpp"

#include <cmath>

#include "favae/checkpoint.hpp"
#include "favae/rng.hpp"

namespace favae {

namespace {
constexpr int kStageWidths[3] = {16, 32, 64};

TensorF kaiming_uniform(std::vector<int> shape, std::int64_t fan_in, Rng& rng) {
    TensorF t(std::move(shape));
    const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
    for (auto& v : t.data) v = static_cast<float>(rng.uniform(-bound, bound));
    return t;
}
}  // namespace

std::vector<Tape::Id> FeatureProvider::stages_in_graph(Tape&, Tape::Id) const {
    throw ConfigError("this feature provider cannot join a gradient graph; "
                      "use the built-in random stack for trainable loss terms");
}

RandomStackProvider::RandomStackProvider(std::uint64_t seed) : seed_(seed) {}

std::vector<int> RandomStackProvider::stage_channels(int /*in_channels*/) const {
    return {kStageWidths[0], kStageWidths[1], kStageWidths[2]};
}

const RandomStackProvider::Stack& RandomStackProvider::stack_for(int in_channels) const {
    std::lock_guard<std::mutex> lk(mu_);
    auto it = cache_.find(in_channels);
    if (it != cache_.end()) return it->second;
    Rng rng(derive_seed(seed_, msg("featstack.", in_channels)));
    Stack s;
    int cin = in_channels;
    for (int stage = 0; stage < 3; ++stage) {
        const int cout = kStageWidths[stage];
        s.w.push_back(kaiming_uniform({cout, cin, 3, 3}, static_cast<std::int64_t>(cin) * 9, rng));
        s.b.push_back(TensorF({cout}));
        cin = cout;
    }
    return cache_.emplace(in_channels, std::move(s)).first->second;
}

std::vector<Tape::Id> RandomStackProvider::stages_in_graph(Tape& tape, Tape::Id x) const {
    const Stack& s = stack_for(tape.val(x).shape[0]);
    std::vector<Tape::Id> out;
    Tape::Id cur = x;
    for (size_t stage = 0; stage < s.w.size(); ++stage) {
        auto w = tape.constant(s.w[stage], "feat_w");
        auto b = tape.constant(s.b[stage], "feat_b");
        cur = tape.leaky_relu(tape.conv2d(cur, w, b, 2, Pad::same));
        out.push_back(cur);
    }
    return out;
}

std::vector<TensorF> RandomStackProvider::stages_plain(const TensorF& x,
                                                       const std::string& /*key*/) const {
    Tape tape;
    auto in = tape.constant(x, "feat_in");
    auto ids = stages_in_graph(tape, in);
    std::vector<TensorF> out;
    out.reserve(ids.size());
    for (auto id : ids) out.push_back(tape.val(id));
    return out;
}

FileFeatureProvider::FileFeatureProvider(std::string root) : root_(std::move(root)) {}

std::vector<int> FileFeatureProvider::stage_channels(int /*in_channels*/) const {
    std::lock_guard<std::mutex> lk(mu_);
    if (probed_channels_.empty())
        throw ConfigError("file feature provider: no feature file read yet; "
                          "stage channels unknown");
    return probed_channels_;
}

std::vector<TensorF> FileFeatureProvider::stages_plain(const TensorF& /*x*/,
                                                       const std::string& key) const {
    if (key.empty()) throw DataError("file feature provider: image has no lookup key");
    const NamedTensors t = load_tensors(root_ + "/" + key + ".favt");
    std::vector<TensorF> out;
    for (int i = 0;; ++i) {
        const std::string name = "stage" + std::to_string(i);
        if (!t.has(name)) break;
        const TensorF& st = t.get(name);
        if (st.rank() != 3)
            throw DataError(msg("feature file '", key, "': ", name, " must be (C,H,W), got ",
                                st.shape_str()));
        out.push_back(st);
    }
    if (out.empty()) throw DataError(msg("feature file '", key, "': no stage0 tensor"));
    std::lock_guard<std::mutex> lk(mu_);
    if (probed_channels_.empty())
        for (const auto& st : out) probed_channels_.push_back(st.shape[0]);
    return out;
}

std::vector<double> feature_vector(const std::vector<TensorF>& stages) {
    std::vector<double> out;
    for (const TensorF& st : stages) {
        const int C = st.shape[0];
        const std::int64_t plane = st.numel() / C;
        for (int c = 0; c < C; ++c) {
            double acc = 0.0;
            for (std::int64_t i = 0; i < plane; ++i) acc += st.data[c * plane + i];
            out.push_back(acc / static_cast<double>(plane));
        }
    }
    return out;
}

TensorF nearest_resize(const TensorF& x, int out_h, int out_w) {
    if (x.rank() != 3)
        throw DimensionError(msg("nearest_resize: need (C,H,W), got ", x.shape_str()));
    const int C = x.shape[0], H = x.shape[1], W = x.shape[2];
    TensorF out({C, out_h, out_w});
    for (int c = 0; c < C; ++c)
        for (int y = 0; y < out_h; ++y) {
            const int sy = std::min(H - 1, y * H / out_h);
            for (int xx = 0; xx < out_w; ++xx) {
                const int sx = std::min(W - 1, xx * W / out_w);
                out.at(c, y, xx) = x.at(c, sy, sx);
            }
        }
    return out;
}

}  // namespace favae
