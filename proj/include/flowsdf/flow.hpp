#pragma once

#include <stdexcept>
#include <utility>

#include "flowsdf/tensor.hpp"

namespace flowsdf {

// Conditional optimal-transport Gaussian path: mu_t(x1) = t*x1,
// sigma_t = 1 - (1 - sigma_min)*t.
struct FlowConfig {
    double sigma_min = 0.0;

    void validate() const {
        if (sigma_min < 0.0 || sigma_min > 0.1)
            throw std::invalid_argument("FlowConfig: sigma_min must lie in [0, 0.1]");
    }
};

namespace detail {
inline void require_time_01(double t, const char* what) {
    if (!(t >= 0.0 && t <= 1.0))
        throw std::invalid_argument(std::string(what) + ": t must lie in [0, 1]");
}
}  // namespace detail

template <typename T>
std::pair<TensorT<T>, T> ot_mean_std(T t, const TensorT<T>& x1, const FlowConfig& cfg) {
    cfg.validate();
    detail::require_time_01(double(t), "ot_mean_std");
    TensorT<T> mu(x1.dims());
    for (std::size_t i = 0; i < x1.numel(); ++i) mu[i] = t * x1[i];
    const T sigma = T(1) - (T(1) - T(cfg.sigma_min)) * t;
    return {std::move(mu), sigma};
}

template <typename T>
TensorT<T> interpolate_state(const TensorT<T>& m0, const TensorT<T>& m1, T t) {
    require_same_shape(m0, m1, "interpolate_state");
    detail::require_time_01(double(t), "interpolate_state");
    TensorT<T> out(m0.dims());
    for (std::size_t i = 0; i < m0.numel(); ++i)
        out[i] = t * m1[i] + (T(1) - t) * m0[i];
    return out;
}

// Regression target of the straight interpolation path; independent of t.
template <typename T>
TensorT<T> training_target(const TensorT<T>& m0, const TensorT<T>& m1) {
    require_same_shape(m0, m1, "training_target");
    TensorT<T> out(m0.dims());
    for (std::size_t i = 0; i < m0.numel(); ++i) out[i] = m1[i] - m0[i];
    return out;
}

// u_t(x | x1) = -(1 - sigma_min) * (x - t*x1) / sigma_t + x1, defined while
// sigma_t > 0.
template <typename T>
TensorT<T> ot_conditional_field(const TensorT<T>& x, const TensorT<T>& x1, T t,
                                const FlowConfig& cfg) {
    cfg.validate();
    require_same_shape(x, x1, "ot_conditional_field");
    detail::require_time_01(double(t), "ot_conditional_field");
    const T one_minus_smin = T(1) - T(cfg.sigma_min);
    const T sigma_t = T(1) - one_minus_smin * t;
    if (!(sigma_t > T(0)))
        throw std::invalid_argument("ot_conditional_field: sigma_t must be > 0");
    TensorT<T> out(x.dims());
    for (std::size_t i = 0; i < x.numel(); ++i)
        out[i] = -one_minus_smin * (x[i] - t * x1[i]) / sigma_t + x1[i];
    return out;
}

// 0.5 * mean((v_pred - target)^2) over all elements.
template <typename T>
T cfm_loss(const TensorT<T>& v_pred, const TensorT<T>& target) {
    require_same_shape(v_pred, target, "cfm_loss");
    if (v_pred.numel() == 0) return T(0);
    T acc = T(0);
    for (std::size_t i = 0; i < v_pred.numel(); ++i) {
        const T d = v_pred[i] - target[i];
        acc += d * d;
    }
    return T(0.5) * acc / T(v_pred.numel());
}

}  // namespace flowsdf
