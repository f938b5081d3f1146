#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flowsdf/flow.hpp"
#include "flowsdf/sampler.hpp"
#include "support.hpp"

using namespace flowsdf;
using testsupport::Rng;

namespace {

ModelDescriptor tiny_desc() {
    ModelDescriptor d;
    d.c1 = 4;
    d.c2 = 4;
    d.cb = 4;
    d.time_dim = 8;
    d.groups = 4;
    return d;
}

TensorT<double> scalar_state(double v) {
    TensorT<double> t({1});
    t[0] = v;
    return t;
}

// Full integration 0 -> 1 of dx/dt = -x from x = 1 with n uniform steps.
double integrate_decay(Solver solver, int n_steps) {
    auto field = [](const TensorT<double>& s, double) {
        TensorT<double> f({1});
        f[0] = -s[0];
        return f;
    };
    TensorT<double> state = scalar_state(1.0);
    const double eta = 1.0 / n_steps;
    state = integrate(field, state, 0.0, eta, solver);
    return state[0];
}

}  // namespace

TEST_CASE("ode_step: exact on constant fields for every solver") {
    auto field = [](const TensorT<double>& s, double) {
        TensorT<double> f(s.dims());
        f.fill(1.0);
        return f;
    };
    for (Solver s : {Solver::Euler, Solver::Midpoint, Solver::Rk4}) {
        const auto out = ode_step(s, field, scalar_state(0.0), 0.0, 0.25);
        CHECK(out[0] == doctest::Approx(0.25).epsilon(1e-15));
    }
    CHECK_THROWS_AS(ode_step(Solver::Euler, field, scalar_state(0.0), 0.9, 0.2),
                    std::invalid_argument);
}

TEST_CASE("ode: exponential decay hand values") {
    // Euler with 4 steps: (1 - 1/4)^4
    CHECK(integrate_decay(Solver::Euler, 4) == doctest::Approx(0.31640625).epsilon(1e-12));
    // all solvers approach exp(-1)
    for (Solver s : {Solver::Euler, Solver::Midpoint, Solver::Rk4}) {
        const double v = integrate_decay(s, 64);
        CHECK(v == doctest::Approx(std::exp(-1.0)).epsilon(2e-2));
    }
}

TEST_CASE("ode: measured convergence orders") {
    const double exact = std::exp(-1.0);
    auto order_of = [&](Solver s) {
        std::vector<double> errs;
        for (int n : {4, 8, 16, 32}) errs.push_back(std::abs(integrate_decay(s, n) - exact));
        double acc = 0;
        for (std::size_t i = 0; i + 1 < errs.size(); ++i)
            acc += std::log2(errs[i] / errs[i + 1]);
        return acc / double(errs.size() - 1);
    };
    CHECK(order_of(Solver::Euler) == doctest::Approx(1.0).epsilon(0.3));
    CHECK(order_of(Solver::Midpoint) == doctest::Approx(2.0).epsilon(0.15));
    CHECK(order_of(Solver::Rk4) == doctest::Approx(4.0).epsilon(0.075));
}

TEST_CASE("integrate: zero field, constant field, and step-count rounding") {
    auto zero = [](const TensorT<double>& s, double) { return TensorT<double>(s.dims()); };
    const auto unchanged = integrate(zero, scalar_state(0.7), 0.0, 0.25, Solver::Euler);
    CHECK(unchanged[0] == 0.7);

    auto constant = [](const TensorT<double>& s, double) {
        TensorT<double> f(s.dims());
        f.fill(2.5);
        return f;
    };
    const auto shifted = integrate(constant, scalar_state(1.0), 0.0, 0.25, Solver::Euler);
    CHECK(shifted[0] == doctest::Approx(3.5).epsilon(1e-12));

    // t_start not a multiple of eta: the final step lands exactly on 1
    const auto partial = integrate(constant, scalar_state(0.0), 1.0 / 3.0, 0.25,
                                   Solver::Euler);
    CHECK(partial[0] == doctest::Approx(2.5 * (2.0 / 3.0)).epsilon(1e-12));

    CHECK_THROWS_AS(integrate(zero, scalar_state(0.0), 1.0, 0.25, Solver::Euler),
                    std::invalid_argument);
}

TEST_CASE("integrate: Euler on the analytic OT field converges to x1") {
    Rng rng(5);
    const FlowConfig cfg{0.0};
    TensorT<double> x0({4, 4}), x1({4, 4});
    for (std::size_t i = 0; i < 16; ++i) {
        x0[i] = rng.uniform(-1, 1);
        x1[i] = rng.uniform(-1, 1);
    }
    auto field = [&](const TensorT<double>& s, double t) {
        return ot_conditional_field(s, x1, t, cfg);
    };
    const auto out = integrate(field, x0, 0.0, 1.0 / 256.0, Solver::Euler);
    double max_err = 0;
    for (std::size_t i = 0; i < 16; ++i)
        max_err = std::max(max_err, std::abs(out[i] - x1[i]));
    CHECK(max_err < 1e-3);
}

TEST_CASE("sample: T = 1 is bitwise identical to one plain integration") {
    const ModelDescriptor d = tiny_desc();
    auto params = allocate_params<float>(d);
    testsupport::randomize_params(params, 55);

    Rng rng(8);
    Tensor image({1, 8, 8});
    for (std::size_t i = 0; i < image.numel(); ++i) image[i] = float(rng.uniform());

    SamplerConfig cfg;
    cfg.nfe = 4;
    cfg.noise_steps = 1;
    cfg.seed = 99;

    Rng run_rng(cfg.seed);
    const Tensor sampled = sample_normalized(params, image, cfg, run_rng);

    // replicate: same prior draw, then integrate without noise injection
    Rng ref_rng(cfg.seed);
    Tensor state({1, 8, 8});
    for (std::size_t i = 0; i < state.numel(); ++i) state[i] = ref_rng.normal_f();
    ModelWorkspace<float> ws;
    auto field = [&](const Tensor& s, float t) -> Tensor {
        return forward(params, s, image, t, ws);
    };
    const Tensor reference = integrate(field, state, 0.0f, float(cfg.step_size()),
                                       cfg.solver);
    REQUIRE(sampled.numel() == reference.numel());
    for (std::size_t i = 0; i < sampled.numel(); ++i) CHECK(sampled[i] == reference[i]);
}

TEST_CASE("sample: noise re-mixing follows the linear schedule") {
    // With an identically-zero field (zero-initialized model), integration is
    // the identity, so two outer steps give exactly
    // m_half = 0.5*m0 + 0.5*z and the returned state equals m_half.
    const ModelDescriptor d = tiny_desc();
    const ModelParams params = init_params(3, d);  // zero output layer

    Rng rng(12);
    Tensor image({1, 8, 8});
    for (std::size_t i = 0; i < image.numel(); ++i) image[i] = float(rng.uniform());

    SamplerConfig cfg;
    cfg.nfe = 4;
    cfg.noise_steps = 2;
    cfg.seed = 1234;

    Rng run_rng(cfg.seed);
    const Tensor out = sample_normalized(params, image, cfg, run_rng);

    Rng ref(cfg.seed);
    Tensor m0({1, 8, 8});
    for (std::size_t i = 0; i < m0.numel(); ++i) m0[i] = ref.normal_f();
    for (std::size_t i = 0; i < m0.numel(); ++i) {
        const float z = ref.normal_f();
        const float expect = 0.5f * m0[i] + 0.5f * z;
        CHECK(out[i] == expect);
    }

    // the re-mix line itself, with the values from the worked example
    const double t = 0.0, tau = 0.5, m1 = 2.0, z = 0.0;
    CHECK((t + tau) * m1 + (1.0 - t - tau) * z == doctest::Approx(1.0));
}

TEST_CASE("sample: fixed seed gives bitwise identical output") {
    const ModelDescriptor d = tiny_desc();
    auto params = allocate_params<float>(d);
    testsupport::randomize_params(params, 70);
    Rng rng(9);
    Tensor image({1, 8, 8});
    for (std::size_t i = 0; i < image.numel(); ++i) image[i] = float(rng.uniform());
    SamplerConfig cfg;
    cfg.nfe = 8;
    cfg.noise_steps = 4;
    cfg.seed = 31;
    Rng r1(cfg.seed), r2(cfg.seed);
    const Tensor a = sample_normalized(params, image, cfg, r1);
    const Tensor b = sample_normalized(params, image, cfg, r2);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("ensemble: K = 1 statistics and identical-seed degeneracy") {
    const ModelDescriptor d = tiny_desc();
    auto params = allocate_params<float>(d);
    testsupport::randomize_params(params, 81);
    Rng rng(10);
    Tensor image({1, 8, 8});
    for (std::size_t i = 0; i < image.numel(); ++i) image[i] = float(rng.uniform());

    SamplerConfig cfg;
    cfg.nfe = 4;
    cfg.ensemble = 1;
    cfg.seed = 17;
    const float delta = 4.0f;
    const EnsembleStats one = ensemble(params, image, cfg, delta);
    for (std::size_t i = 0; i < one.variance.numel(); ++i) {
        CHECK(one.variance[i] == 0.0f);
        CHECK(one.stddev[i] == 0.0f);
    }
    // K = 1 mean is the single de-normalized sample
    Rng ref(cfg.seed);
    const Tensor single = sample_normalized(params, image, cfg, ref);
    for (std::size_t i = 0; i < single.numel(); ++i)
        CHECK(one.mean.values[i] == single[i] * delta);
    // consensus is the zero threshold of the mean
    for (std::size_t i = 0; i < single.numel(); ++i)
        CHECK(one.consensus.values[i] == (one.mean.values[i] <= 0.0f ? 1 : 0));
}

TEST_CASE("ensemble: population variance matches the K-run formula") {
    const ModelDescriptor d = tiny_desc();
    auto params = allocate_params<float>(d);
    testsupport::randomize_params(params, 91);
    Rng rng(11);
    Tensor image({1, 8, 8});
    for (std::size_t i = 0; i < image.numel(); ++i) image[i] = float(rng.uniform());

    SamplerConfig cfg;
    cfg.nfe = 4;
    cfg.ensemble = 3;
    cfg.seed = 200;
    cfg.threads = 2;
    const float delta = 2.0f;
    const EnsembleStats stats = ensemble(params, image, cfg, delta);

    std::vector<Tensor> runs;
    for (uint32_t k = 0; k < 3; ++k) {
        Rng r(cfg.seed + k);
        Tensor s = sample_normalized(params, image, cfg, r);
        for (std::size_t i = 0; i < s.numel(); ++i) s[i] *= delta;
        runs.push_back(std::move(s));
    }
    for (std::size_t i = 0; i < stats.variance.numel(); ++i) {
        const float mean = (runs[0][i] + runs[1][i] + runs[2][i]) / 3.0f;
        float var = 0.0f;
        for (const auto& r : runs) {
            const float dv = r[i] - mean;
            var += dv * dv;
        }
        var /= 3.0f;
        CHECK(stats.mean.values[i] == mean);
        CHECK(stats.variance[i] == doctest::Approx(var).epsilon(1e-6));
        CHECK(stats.variance[i] >= 0.0f);
        CHECK(stats.stddev[i] == doctest::Approx(std::sqrt(var)).epsilon(1e-5));
    }

    // two identical per-pixel samples {0.2, 0.4}: mean 0.3, variance 0.01
    const double m = (0.2 + 0.4) / 2.0;
    const double v = ((0.2 - m) * (0.2 - m) + (0.4 - m) * (0.4 - m)) / 2.0;
    CHECK(m == doctest::Approx(0.3));
    CHECK(v == doctest::Approx(0.01));
}

TEST_CASE("sampler config validation") {
    SamplerConfig cfg;
    cfg.nfe = 0;
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg = SamplerConfig{};
    cfg.solver = Solver::Rk4;
    cfg.nfe = 6;  // not a multiple of 4 evaluations
    CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
    cfg.nfe = 8;
    CHECK_NOTHROW(cfg.validate());
    CHECK(cfg.step_size() == doctest::Approx(0.5));
    CHECK(solver_from_string("midpoint") == Solver::Midpoint);
    CHECK_THROWS(solver_from_string("leapfrog"));
}
