#ifndef FAVAE_ADAM_HPP
#define FAVAE_ADAM_HPP

#include <cmath>
#include <cstdint>
#include <vector>

#include "favae/tensor.hpp"

namespace favae {

// Adam with bias correction. Moment slots are created on first use and stay
// parallel to the parameter list; step count is shared across parameters.
template <typename T>
struct AdamStateT {
    double lr = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    std::int64_t step = 0;
    std::vector<TensorT<T>> m, v;

    void reset(const std::vector<TensorT<T>*>& params) {
        m.clear();
        v.clear();
        for (const auto* p : params) {
            m.emplace_back(p->shape);
            v.emplace_back(p->shape);
        }
        step = 0;
    }

    void update(const std::vector<TensorT<T>*>& params, const std::vector<TensorT<T>>& grads) {
        if (m.empty()) reset(params);
        if (params.size() != grads.size() || params.size() != m.size())
            throw DimensionError(msg("adam: ", params.size(), " params vs ", grads.size(),
                                     " grads vs ", m.size(), " moment slots"));
        ++step;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step));
        for (size_t p = 0; p < params.size(); ++p) {
            TensorT<T>& w = *params[p];
            const TensorT<T>& g = grads[p];
            if (!w.same_shape(g))
                throw DimensionError(msg("adam: param ", w.shape_str(), " vs grad ",
                                         g.shape_str()));
            TensorT<T>& mp = m[p];
            TensorT<T>& vp = v[p];
            for (std::int64_t i = 0; i < w.numel(); ++i) {
                const double gi = static_cast<double>(g.data[i]);
                const double mi = beta1 * static_cast<double>(mp.data[i]) + (1.0 - beta1) * gi;
                const double vi = beta2 * static_cast<double>(vp.data[i]) + (1.0 - beta2) * gi * gi;
                mp.data[i] = static_cast<T>(mi);
                vp.data[i] = static_cast<T>(vi);
                const double mhat = mi / bc1;
                const double vhat = vi / bc2;
                w.data[i] = static_cast<T>(static_cast<double>(w.data[i]) -
                                           lr * mhat / (std::sqrt(vhat) + eps));
            }
        }
    }
};

using AdamState = AdamStateT<float>;

}  // namespace favae

#endif
