#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <utility>
#include <vector>

#include "flowsdf/model.hpp"
#include "flowsdf/tensor.hpp"

namespace flowsdf {

struct AdamConfig {
    double learning_rate = 1e-4;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double epsilon = 1e-8;
};

// First/second moments plus the shared step counter.
struct AdamState {
    ModelParams m;
    ModelParams v;
    uint64_t step = 0;

    static AdamState zeros(const ModelDescriptor& desc) {
        AdamState s;
        s.m = allocate_params<float>(desc);
        s.v = allocate_params<float>(desc);
        return s;
    }
};

namespace detail {

template <typename P>
std::vector<decltype(&std::declval<P&>().out_b)> tensor_list(P& p) {
    std::vector<decltype(&p.out_b)> out;
    for_each_param(p, [&](const std::string&, auto& t) { out.push_back(&t); });
    return out;
}

inline void adam_update_tensor(Tensor& theta, const Tensor& grad, Tensor& m, Tensor& v,
                               const AdamConfig& cfg, double corr1, double corr2) {
    if (!theta.same_shape(grad))
        throw std::invalid_argument("adam_step: shape mismatch");
    const float b1 = float(cfg.beta1), b2 = float(cfg.beta2);
    for (std::size_t i = 0; i < theta.numel(); ++i) {
        const float g = grad[i];
        m[i] = b1 * m[i] + (1.0f - b1) * g;
        v[i] = b2 * v[i] + (1.0f - b2) * g * g;
        const double mhat = double(m[i]) / corr1;
        const double vhat = double(v[i]) / corr2;
        theta[i] -= float(cfg.learning_rate * mhat / (std::sqrt(vhat) + cfg.epsilon));
    }
}

}  // namespace detail

// One bias-corrected Adam step over every parameter tensor.
inline void adam_step(ModelParams& params, const ModelParams& grads, AdamState& state,
                      const AdamConfig& cfg) {
    state.step += 1;
    const double corr1 = 1.0 - std::pow(cfg.beta1, double(state.step));
    const double corr2 = 1.0 - std::pow(cfg.beta2, double(state.step));
    auto ts = detail::tensor_list(params);
    auto gs = detail::tensor_list(grads);
    auto ms = detail::tensor_list(state.m);
    auto vs = detail::tensor_list(state.v);
    for (std::size_t i = 0; i < ts.size(); ++i)
        detail::adam_update_tensor(*ts[i], *gs[i], *ms[i], *vs[i], cfg, corr1, corr2);
}

// ema <- decay*ema + (1-decay)*params, elementwise.
inline void ema_update_tensor(Tensor& ema, const Tensor& params, double decay) {
    if (!ema.same_shape(params))
        throw std::invalid_argument("ema_update: shape mismatch");
    const float d = float(decay), c = float(1.0 - decay);
    for (std::size_t i = 0; i < ema.numel(); ++i)
        ema[i] = d * ema[i] + c * params[i];
}

inline void ema_update(ModelParams& ema, const ModelParams& params, double decay) {
    auto es = detail::tensor_list(ema);
    auto ps = detail::tensor_list(params);
    for (std::size_t i = 0; i < es.size(); ++i)
        ema_update_tensor(*es[i], *ps[i], decay);
}

// Zeroes every gradient tensor in place.
inline void zero_params(ModelParams& p) {
    for_each_param(p, [](const std::string&, Tensor& t) { t.fill(0.0f); });
}

// acc += other, tensor by tensor (used for ordered batch reduction).
inline void add_params(ModelParams& acc, const ModelParams& other) {
    auto as = detail::tensor_list(acc);
    auto os = detail::tensor_list(other);
    for (std::size_t i = 0; i < as.size(); ++i)
        for (std::size_t j = 0; j < as[i]->numel(); ++j)
            (*as[i])[j] += (*os[i])[j];
}

}  // namespace flowsdf
