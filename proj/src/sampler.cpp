#include "flowsdf/sampler.hpp"

#include <cmath>
#include <vector>

#include "flowsdf/errors.hpp"
#include "flowsdf/parallel.hpp"

namespace flowsdf {

Solver solver_from_string(const std::string& name) {
    if (name == "euler") return Solver::Euler;
    if (name == "midpoint") return Solver::Midpoint;
    if (name == "rk4") return Solver::Rk4;
    throw ConfigError("unknown solver '" + name + "' (expected euler|midpoint|rk4)");
}

const char* solver_name(Solver s) {
    switch (s) {
        case Solver::Euler: return "euler";
        case Solver::Midpoint: return "midpoint";
        case Solver::Rk4: return "rk4";
    }
    return "?";
}

namespace {

void require_finite(const Tensor& t, const char* stage, double time) {
    for (std::size_t i = 0; i < t.numel(); ++i) {
        if (!std::isfinite(t[i]))
            throw NumericalError(std::string("sample: non-finite state during ") + stage +
                                 " at t = " + std::to_string(time));
    }
}

}  // namespace

Tensor sample_normalized(const ModelParams& params, const Tensor& image,
                         const SamplerConfig& cfg, Rng& rng) {
    cfg.validate();
    const uint32_t H = image.dim(1), W = image.dim(2);

    ModelWorkspace<float> ws;
    auto field = [&](const Tensor& state, float t) -> Tensor {
        return forward(params, state, image, t, ws);
    };

    Tensor state({1, H, W});
    for (std::size_t i = 0; i < state.numel(); ++i) state[i] = rng.normal_f();

    const uint32_t T = cfg.noise_steps;
    const float eta = float(cfg.step_size());
    for (uint32_t i = 0; i < T; ++i) {
        const float t = float(i) / float(T);
        Tensor integrated = integrate(field, state, t, eta, cfg.solver);
        require_finite(integrated, "ode integration", double(t));
        if (i + 1 < T) {
            const float t_next = float(i + 1) / float(T);
            for (std::size_t j = 0; j < integrated.numel(); ++j) {
                const float z = rng.normal_f();
                integrated[j] = t_next * integrated[j] + (1.0f - t_next) * z;
            }
            require_finite(integrated, "noise injection", double(t_next));
        }
        state = std::move(integrated);
    }
    return state;
}

EnsembleStats ensemble_stats_from_runs(const std::vector<Tensor>& runs, float delta) {
    if (runs.empty())
        throw std::invalid_argument("ensemble_stats_from_runs: need at least one run");
    const uint32_t H = runs[0].rank() == 3 ? runs[0].dim(1) : runs[0].dim(0);
    const uint32_t W = runs[0].rank() == 3 ? runs[0].dim(2) : runs[0].dim(1);
    const std::size_t n = std::size_t(H) * W;
    const std::size_t K = runs.size();

    EnsembleStats stats;
    stats.mean = SdfMask(int(H), int(W), delta);
    stats.variance = Tensor({H, W});
    stats.stddev = Tensor({H, W});

    // Ordered two-pass reduction: results do not depend on thread count.
    for (std::size_t i = 0; i < n; ++i) {
        float acc = 0.0f;
        for (std::size_t k = 0; k < K; ++k) acc += runs[k][i];
        stats.mean.values[i] = acc / float(K);
    }
    for (std::size_t i = 0; i < n; ++i) {
        float acc = 0.0f;
        for (std::size_t k = 0; k < K; ++k) {
            const float d = runs[k][i] - stats.mean.values[i];
            acc += d * d;
        }
        stats.variance[i] = acc / float(K);  // population form
        stats.stddev[i] = std::sqrt(stats.variance[i]);
    }
    stats.consensus = mask_from_sdf(stats.mean);
    return stats;
}

EnsembleStats ensemble(const ModelParams& params, const Tensor& image,
                       const SamplerConfig& cfg, float delta) {
    cfg.validate();
    const uint32_t K = cfg.ensemble;

    std::vector<Tensor> runs(K);
    parallel_for(K, cfg.threads, [&](std::size_t k) {
        Rng rng(cfg.seed + k);
        runs[k] = sample_normalized(params, image, cfg, rng);
        // de-normalize to SDF units
        for (std::size_t i = 0; i < runs[k].numel(); ++i) runs[k][i] *= delta;
    });
    return ensemble_stats_from_runs(runs, delta);
}

}  // namespace flowsdf
