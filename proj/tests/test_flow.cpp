#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flowsdf/flow.hpp"
#include "support.hpp"

using namespace flowsdf;
using testsupport::Rng;

namespace {

template <typename T>
TensorT<T> constant(std::vector<uint32_t> dims, T v) {
    TensorT<T> t(std::move(dims));
    t.fill(v);
    return t;
}

template <typename T>
TensorT<T> random_field(Rng& rng, std::vector<uint32_t> dims, double lo = -1, double hi = 1) {
    TensorT<T> t(std::move(dims));
    for (std::size_t i = 0; i < t.numel(); ++i) t[i] = T(rng.uniform(lo, hi));
    return t;
}

}  // namespace

TEST_CASE("ot_mean_std endpoints and midpoint") {
    const FlowConfig cfg{0.01};
    const auto x1 = constant<double>({2, 2}, 2.0);

    auto [mu0, s0] = ot_mean_std(0.0, x1, cfg);
    for (std::size_t i = 0; i < mu0.numel(); ++i) CHECK(mu0[i] == 0.0);
    CHECK(s0 == 1.0);

    auto [mu1, s1] = ot_mean_std(1.0, x1, cfg);
    for (std::size_t i = 0; i < mu1.numel(); ++i) CHECK(mu1[i] == 2.0);
    CHECK(s1 == doctest::Approx(0.01));

    auto [mu, s] = ot_mean_std(0.5, x1, cfg);
    for (std::size_t i = 0; i < mu.numel(); ++i) CHECK(mu[i] == doctest::Approx(1.0));
    CHECK(s == doctest::Approx(0.505));

    CHECK_THROWS_AS(ot_mean_std(1.5, x1, cfg), std::invalid_argument);
    CHECK_THROWS_AS(ot_mean_std(-0.1, x1, cfg), std::invalid_argument);
}

TEST_CASE("interpolate_state endpoints, example, fixed point") {
    const auto m0 = constant<double>({3}, -0.4);
    const auto m1 = constant<double>({3}, 0.8);

    const auto at0 = interpolate_state(m0, m1, 0.0);
    const auto at1 = interpolate_state(m0, m1, 1.0);
    for (std::size_t i = 0; i < 3; ++i) {
        CHECK(at0[i] == -0.4);
        CHECK(at1[i] == 0.8);
    }
    const auto mid = interpolate_state(m0, m1, 0.25);
    for (std::size_t i = 0; i < 3; ++i) CHECK(mid[i] == doctest::Approx(-0.1));

    Rng rng(1);
    const auto same = random_field<double>(rng, {4});
    for (double t : {0.0, 0.3, 0.77, 1.0}) {
        const auto out = interpolate_state(same, same, t);
        for (std::size_t i = 0; i < 4; ++i) CHECK(out[i] == doctest::Approx(same[i]));
    }

    const auto bad = constant<double>({2}, 0.0);
    CHECK_THROWS_AS(interpolate_state(m0, bad, 0.5), std::invalid_argument);
}

TEST_CASE("training_target example and zero case") {
    const auto m0 = constant<double>({2}, -0.4);
    const auto m1 = constant<double>({2}, 0.8);
    const auto tgt = training_target(m0, m1);
    for (std::size_t i = 0; i < 2; ++i) CHECK(tgt[i] == doctest::Approx(1.2));

    const auto zero = training_target(m1, m1);
    for (std::size_t i = 0; i < 2; ++i) CHECK(zero[i] == 0.0);
}

TEST_CASE("training target equals the sigma_min=0 OT field along the path") {
    Rng rng(2);
    const FlowConfig cfg{0.0};
    for (int it = 0; it < 20; ++it) {
        const auto m0 = random_field<double>(rng, {6, 6}, -2, 2);
        const auto m1 = random_field<double>(rng, {6, 6}, -2, 2);
        const auto tgt = training_target(m0, m1);
        for (int k = 0; k < 32; ++k) {
            const double t = (k + 0.5) / 32.0;  // strictly inside (0, 1)
            const auto xt = interpolate_state(m0, m1, t);
            const auto u = ot_conditional_field(xt, m1, t, cfg);
            for (std::size_t i = 0; i < u.numel(); ++i)
                CHECK(testsupport::rel_err(u[i], tgt[i], 1e-12) < 1e-10);
        }
    }
}

TEST_CASE("ot_conditional_field values and domain") {
    const FlowConfig cfg{0.0};
    const auto x1 = constant<double>({2}, 1.0);

    const auto at_target = ot_conditional_field(x1, x1, 0.7, cfg);
    for (std::size_t i = 0; i < 2; ++i) CHECK(at_target[i] == doctest::Approx(0.0));

    const auto x0 = constant<double>({2}, 0.0);
    const auto u = ot_conditional_field(x0, x1, 0.5, cfg);
    for (std::size_t i = 0; i < 2; ++i) CHECK(u[i] == doctest::Approx(2.0));

    CHECK_THROWS_AS(ot_conditional_field(x0, x1, 1.0, cfg), std::invalid_argument);
}

// The analytic field along the exact conditional flow
// psi_t(x0) = sigma_t*x0 + t*x1 must equal d(psi)/dt.
TEST_CASE("path/field consistency against central differences") {
    Rng rng(3);
    for (double sigma_min : {0.0, 0.01}) {
        const FlowConfig cfg{sigma_min};
        for (int pair = 0; pair < 10; ++pair) {
            const auto x0 = random_field<double>(rng, {5, 5}, -2, 2);
            const auto x1 = random_field<double>(rng, {5, 5}, -2, 2);
            auto flow_at = [&](double t) {
                TensorT<double> out({5, 5});
                const double sigma = 1.0 - (1.0 - sigma_min) * t;
                for (std::size_t i = 0; i < out.numel(); ++i)
                    out[i] = sigma * x0[i] + t * x1[i];
                return out;
            };
            for (int k = 0; k < 32; ++k) {
                const double t = 0.01 + 0.97 * k / 31.0;
                const double h = 1e-5;
                const auto fp = flow_at(t + h);
                const auto fm = flow_at(t - h);
                const auto u = ot_conditional_field(flow_at(t), x1, t, cfg);
                for (std::size_t i = 0; i < u.numel(); ++i) {
                    const double fd = (fp[i] - fm[i]) / (2 * h);
                    CHECK(testsupport::rel_err(fd, u[i], 1e-9) < 1e-6);
                }
            }
        }
    }
}

TEST_CASE("cfm_loss values and properties") {
    const auto zero2 = constant<double>({2}, 0.0);
    CHECK(cfm_loss(zero2, zero2) == 0.0);

    const auto ones = constant<double>({7}, 1.0);
    const auto zeros = constant<double>({7}, 0.0);
    CHECK(cfm_loss(zeros, ones) == doctest::Approx(0.5));

    TensorT<double> v({2}), u({2});
    v[0] = 1; v[1] = 3;
    u[0] = 0; u[1] = 1;
    CHECK(cfm_loss(v, u) == doctest::Approx(1.25));

    Rng rng(4);
    for (int it = 0; it < 50; ++it) {
        const auto a = random_field<double>(rng, {9});
        const auto b = random_field<double>(rng, {9});
        const double l = cfm_loss(a, b);
        CHECK(l >= 0.0);
        bool equal = true;
        for (std::size_t i = 0; i < 9; ++i) equal &= a[i] == b[i];
        CHECK((l == 0.0) == equal);
    }

    CHECK_THROWS_AS(cfm_loss(zero2, ones), std::invalid_argument);
}

TEST_CASE("flow config validation") {
    CHECK_THROWS_AS(FlowConfig{-0.1}.validate(), std::invalid_argument);
    CHECK_THROWS_AS(FlowConfig{0.2}.validate(), std::invalid_argument);
    CHECK_NOTHROW(FlowConfig{0.0}.validate());
    CHECK_NOTHROW(FlowConfig{0.1}.validate());
}
