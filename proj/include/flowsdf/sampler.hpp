#pragma once

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>

#include "flowsdf/model.hpp"
#include "flowsdf/rng.hpp"
#include "flowsdf/sdf.hpp"
#include "flowsdf/tensor.hpp"

namespace flowsdf {

enum class Solver { Euler, Midpoint, Rk4 };

Solver solver_from_string(const std::string& name);
const char* solver_name(Solver s);

// Field evaluations consumed by one step of each scheme.
inline int solver_evals(Solver s) {
    switch (s) {
        case Solver::Euler: return 1;
        case Solver::Midpoint: return 2;
        case Solver::Rk4: return 4;
    }
    return 1;
}

struct SamplerConfig {
    uint32_t nfe = 4;          // number of field evaluations per integration
    uint32_t noise_steps = 1;  // T; 1 recovers plain ODE sampling
    uint32_t ensemble = 1;     // K
    Solver solver = Solver::Euler;
    uint64_t seed = 0;
    bool use_ema = true;
    int threads = 0;

    void validate() const {
        if (nfe < 1) throw std::invalid_argument("SamplerConfig: nfe must be >= 1");
        if (noise_steps < 1)
            throw std::invalid_argument("SamplerConfig: noise_steps must be >= 1");
        if (ensemble < 1)
            throw std::invalid_argument("SamplerConfig: ensemble must be >= 1");
        if (nfe % uint32_t(solver_evals(solver)) != 0)
            throw std::invalid_argument(
                "SamplerConfig: nfe must be a multiple of the solver's evaluations per step");
    }

    // Step size so the integration spends exactly `nfe` field evaluations
    // over the unit interval.
    double step_size() const { return double(solver_evals(solver)) / double(nfe); }
};

// One explicit step of the chosen scheme from time l with step eta.
// field_fn: (state, time) -> field of the same shape.
template <typename T, typename FieldFn>
TensorT<T> ode_step(Solver solver, FieldFn&& field_fn, const TensorT<T>& state, T l, T eta) {
    if (!(double(l) + double(eta) <= 1.0 + 1e-9))
        throw std::invalid_argument("ode_step: step exceeds t = 1");
    const std::size_t n = state.numel();
    TensorT<T> out(state.dims());
    switch (solver) {
        case Solver::Euler: {
            const TensorT<T> k1 = field_fn(state, l);
            for (std::size_t i = 0; i < n; ++i) out[i] = state[i] + eta * k1[i];
            return out;
        }
        case Solver::Midpoint: {
            const TensorT<T> k1 = field_fn(state, l);
            TensorT<T> mid(state.dims());
            const T half = eta / T(2);
            for (std::size_t i = 0; i < n; ++i) mid[i] = state[i] + half * k1[i];
            const TensorT<T> k2 = field_fn(mid, l + half);
            for (std::size_t i = 0; i < n; ++i) out[i] = state[i] + eta * k2[i];
            return out;
        }
        case Solver::Rk4: {
            const T half = eta / T(2);
            const TensorT<T> k1 = field_fn(state, l);
            TensorT<T> tmp(state.dims());
            for (std::size_t i = 0; i < n; ++i) tmp[i] = state[i] + half * k1[i];
            const TensorT<T> k2 = field_fn(tmp, l + half);
            for (std::size_t i = 0; i < n; ++i) tmp[i] = state[i] + half * k2[i];
            const TensorT<T> k3 = field_fn(tmp, l + half);
            for (std::size_t i = 0; i < n; ++i) tmp[i] = state[i] + eta * k3[i];
            const TensorT<T> k4 = field_fn(tmp, l + eta);
            const T w = eta / T(6);
            for (std::size_t i = 0; i < n; ++i)
                out[i] = state[i] +
                         w * (k1[i] + T(2) * k2[i] + T(2) * k3[i] + k4[i]);
            return out;
        }
    }
    throw std::logic_error("ode_step: unknown solver");
}

// Repeated ode_step from t_start to exactly 1. The step count is
// round((1 - t_start)/eta) (at least one), with the final step stretched or
// shrunk to land on t = 1.
template <typename T, typename FieldFn>
TensorT<T> integrate(FieldFn&& field_fn, TensorT<T> state, T t_start, T eta, Solver solver) {
    if (!(double(t_start) >= 0.0 && double(t_start) < 1.0))
        throw std::invalid_argument("integrate: t_start must lie in [0, 1)");
    const long n = std::max(1l, std::lround((1.0 - double(t_start)) / double(eta)));
    for (long k = 0; k < n; ++k) {
        const T l = t_start + T(k) * eta;
        const T h = (k == n - 1) ? T(1) - l : eta;
        state = ode_step(solver, field_fn, state, l, h);
    }
    return state;
}

// ---- model-backed sampling -------------------------------------------------

// Algorithm: draw the prior, then for each outer step integrate the ODE to
// t = 1 and re-mix with fresh noise at the next outer time. Returns the
// normalized field in [-1, 1] units; callers rescale via denormalize_sdf.
Tensor sample_normalized(const ModelParams& params, const Tensor& image,
                         const SamplerConfig& cfg, Rng& rng);

// Per-pixel statistics over K independent sampling runs (run k uses seed
// cfg.seed + k). Mean and variance are in SDF units; the consensus mask is
// the zero threshold of the mean.
struct EnsembleStats {
    SdfMask mean;
    Tensor variance;
    Tensor stddev;
    BinaryMask consensus;
};

// Population statistics (1/K normalization) over already de-normalized runs;
// the consensus mask is the zero threshold of the mean.
EnsembleStats ensemble_stats_from_runs(const std::vector<Tensor>& runs, float delta);

EnsembleStats ensemble(const ModelParams& params, const Tensor& image,
                       const SamplerConfig& cfg, float delta);

}  // namespace flowsdf
