#include <cmath>

#include <doctest.h>

#include "stower/ops.hpp"
#include "stower/optim.hpp"
#include "testutil.hpp"

using namespace stower;

TEST_CASE("adam leaves parameters unchanged on zero gradient") {
    Tensor p = Tensor::from_data({3}, {1, 2, 3}, true);
    p.ensure_grad();
    Adam opt({p});
    opt.step();
    testutil::check_close(p.data(), std::vector<float>{1, 2, 3}, 0.0);
    CHECK(opt.step_count() == 1);
}

TEST_CASE("first adam step moves by about lr in the gradient sign direction") {
    for (float g : {0.01f, 1.0f, 250.0f, -3.0f}) {
        Tensor p = Tensor::from_data({1}, {0.5f}, true);
        p.grad_mut()[0] = g;
        AdamConfig config;
        Adam opt({p}, config);
        opt.step();
        const float delta = p.data()[0] - 0.5f;
        // bias correction makes mhat/sqrt(vhat) ~ sign(g) on step one
        CHECK(std::abs(delta + config.lr * (g > 0 ? 1.0f : -1.0f)) < config.lr * 1e-3f);
    }
}

TEST_CASE("two adam steps match a scripted recurrence") {
    // hand-simulated Adam on a scalar with fixed gradients 0.3 then -0.1
    const double lr = 0.0005, b1 = 0.9, b2 = 0.999, eps = 1e-8;
    float m = 0, v = 0;
    double w_ref = 0.25;
    const float grads[2] = {0.3f, -0.1f};
    for (int t = 1; t <= 2; ++t) {
        const float g = grads[t - 1];
        m = static_cast<float>(b1 * m + (1 - b1) * g);
        v = static_cast<float>(b2 * v + (1 - b2) * g * g);
        const double mhat = m / (1 - std::pow(b1, t));
        const double vhat = v / (1 - std::pow(b2, t));
        w_ref = static_cast<float>(w_ref - lr * mhat / (std::sqrt(vhat) + eps));
    }

    Tensor p = Tensor::from_data({1}, {0.25f}, true);
    Adam opt({p});
    for (float g : grads) {
        opt.zero_grad();
        p.grad_mut()[0] = g;
        opt.step();
    }
    CHECK(std::abs(static_cast<double>(p.data()[0]) - w_ref) < 1e-7);
    CHECK(opt.step_count() == 2);
}

TEST_CASE("adam converges on a quadratic") {
    Tensor p = Tensor::from_data({2}, {3.0f, -2.0f}, true);
    Adam opt({p}, AdamConfig{.lr = 0.05f});
    for (int i = 0; i < 400; ++i) {
        opt.zero_grad();
        backward(sum(mul(p, p)));
        opt.step();
    }
    CHECK(std::abs(p.data()[0]) < 0.05f);
    CHECK(std::abs(p.data()[1]) < 0.05f);
}

TEST_CASE("global norm clipping rescales gradients") {
    Tensor a = Tensor::from_data({2}, {0, 0}, true);
    Tensor b = Tensor::from_data({1}, {0}, true);
    a.grad_mut()[0] = 3.0f;
    a.grad_mut()[1] = 0.0f;
    b.grad_mut()[0] = 4.0f;
    std::vector<Tensor> params = {a, b};
    const double norm = clip_global_norm(params, 1.0);
    CHECK(norm == doctest::Approx(5.0));
    CHECK(a.grad()[0] == doctest::Approx(0.6).epsilon(1e-5));
    CHECK(b.grad()[0] == doctest::Approx(0.8).epsilon(1e-5));

    // under the limit: untouched
    const double small = clip_global_norm(params, 10.0);
    CHECK(small == doctest::Approx(1.0));
    CHECK(a.grad()[0] == doctest::Approx(0.6).epsilon(1e-5));
}
