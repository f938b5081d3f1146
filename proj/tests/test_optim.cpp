#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "flowsdf/optim.hpp"
#include "support.hpp"

using namespace flowsdf;

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

}  // namespace

TEST_CASE("adam: zero gradient leaves parameters unchanged, increments step") {
    const ModelDescriptor d = tiny_desc();
    ModelParams p = init_params(1, d);
    const ModelParams before = p;
    ModelParams g = allocate_params<float>(d);  // all zero
    AdamState st = AdamState::zeros(d);
    adam_step(p, g, st, AdamConfig{});
    CHECK(st.step == 1);
    bool unchanged = true;
    for_each_param(p, [&](const std::string& name, const Tensor& t) {
        for_each_param(before, [&](const std::string& n2, const Tensor& t2) {
            if (n2 != name) return;
            for (std::size_t i = 0; i < t.numel(); ++i) unchanged &= t[i] == t2[i];
        });
    });
    CHECK(unchanged);
}

TEST_CASE("adam: first bias-corrected step with unit gradient") {
    const ModelDescriptor d = tiny_desc();
    ModelParams p = init_params(2, d);
    const float theta0 = p.out_b[0];
    ModelParams g = allocate_params<float>(d);
    g.out_b[0] = 1.0f;
    AdamState st = AdamState::zeros(d);
    AdamConfig cfg;
    cfg.learning_rate = 1e-4;
    adam_step(p, g, st, cfg);
    // mhat = vhat = 1 after bias correction, so the update is
    // -lr * 1/(1 + eps)
    const double expect = -1e-4 * (1.0 / (1.0 + 1e-8));
    CHECK(double(p.out_b[0] - theta0) == doctest::Approx(expect).epsilon(1e-6));
}

TEST_CASE("adam: constant gradient drives per-step updates toward lr") {
    const ModelDescriptor d = tiny_desc();
    ModelParams p = init_params(3, d);
    ModelParams g = allocate_params<float>(d);
    g.out_b[0] = 0.37f;  // any constant
    AdamState st = AdamState::zeros(d);
    AdamConfig cfg;
    cfg.learning_rate = 1e-3;
    float prev = p.out_b[0];
    double last_delta = 0.0;
    for (int i = 0; i < 2000; ++i) {
        adam_step(p, g, st, cfg);
        last_delta = double(prev - p.out_b[0]);
        prev = p.out_b[0];
    }
    CHECK(last_delta == doctest::Approx(cfg.learning_rate).epsilon(0.02));
}

TEST_CASE("ema: fixed point, arithmetic example, decay 0") {
    Tensor e({3}), p({3});
    e.fill(1.0f);
    p.fill(1.0f);
    ema_update_tensor(e, p, 0.9999);
    for (std::size_t i = 0; i < 3; ++i) CHECK(e[i] == 1.0f);

    e.fill(0.0f);
    p.fill(1.0f);
    ema_update_tensor(e, p, 0.9999);
    for (std::size_t i = 0; i < 3; ++i)
        CHECK(double(e[i]) == doctest::Approx(1e-4).epsilon(1e-4));

    e.fill(0.25f);
    ema_update_tensor(e, p, 0.0);
    for (std::size_t i = 0; i < 3; ++i) CHECK(e[i] == 1.0f);

    Tensor bad({2});
    CHECK_THROWS_AS(ema_update_tensor(bad, p, 0.5), std::invalid_argument);
}

TEST_CASE("ema: geometric convergence toward frozen parameters") {
    const ModelDescriptor d = tiny_desc();
    ModelParams p = init_params(4, d);
    ModelParams e = init_params(5, d);  // different start
    const double decay = 0.9;

    auto distance = [&]() {
        double acc = 0;
        for_each_param(p, [&](const std::string& name, const Tensor& tp) {
            for_each_param(e, [&](const std::string& n2, const Tensor& te) {
                if (n2 != name) return;
                for (std::size_t i = 0; i < tp.numel(); ++i) {
                    const double diff = double(tp[i]) - double(te[i]);
                    acc += diff * diff;
                }
            });
        });
        return std::sqrt(acc);
    };

    double prev = distance();
    for (int i = 0; i < 20; ++i) {
        ema_update(e, p, decay);
        const double cur = distance();
        if (prev > 1e-9) CHECK(cur == doctest::Approx(prev * decay).epsilon(1e-3));
        prev = cur;
    }
}
