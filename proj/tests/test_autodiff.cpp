#include "doctest.h"

#include <cmath>
#include <limits>
#include <stdexcept>

#include "galu/autodiff.hpp"

using namespace galu;

TEST_CASE("backward of a linear model returns the input") {
    Tape tape;
    const int theta = tape.param(Tensor({1, 2}, {3, 4}));
    const int x = tape.input(Tensor({2}, {1, 2}));
    const int y = tape.matvec(theta, x);
    const int out = tape.select(y, 0);
    CHECK(tape.value(out)[0] == doctest::Approx(11.0));
    const auto grads = tape.backward(out);
    const Tensor& g = grads.at(theta);
    CHECK(g[0] == 1.0);
    CHECK(g[1] == 2.0);
}

TEST_CASE("backward of a square") {
    Tape tape;
    const int theta = tape.param(Tensor::scalar(3.0));
    const int sq = tape.mul(theta, theta);
    const auto grads = tape.backward(sq);
    CHECK(grads.at(theta)[0] == doctest::Approx(6.0));
}

TEST_CASE("zero hard gate blocks every gradient through the unit") {
    // y = w2 . (gate ⊙ (w1 x)); the gated-off unit contributes nothing
    Tape tape;
    const int w1 = tape.param(Tensor({2, 1}, {1.0, -2.0}));
    const int w2 = tape.param(Tensor({1, 2}, {3.0, 5.0}));
    const int x = tape.input(Tensor({1}, {2.0}));
    const int q = tape.matvec(w1, x);
    const int z = tape.hard_gate(q, Tensor({2}, {0.0, 1.0}));
    const int y = tape.matvec(w2, z);
    const int out = tape.select(y, 0);
    const auto grads = tape.backward(out);
    CHECK(grads.at(w1)[0] == 0.0);     // first unit is gated off
    CHECK(grads.at(w1)[1] != 0.0);
    CHECK(grads.at(w2)[0] == 0.0);     // reads the dead unit's output
    CHECK(grads.at(w2)[1] != 0.0);
}

TEST_CASE("backward requires a scalar output") {
    Tape tape;
    const int v = tape.input(Tensor({2}, {1, 2}));
    const int w = tape.param(Tensor({2, 2}, {1, 0, 0, 1}));
    const int y = tape.matvec(w, v);
    CHECK_THROWS_AS(tape.backward(y), std::logic_error);
}

TEST_CASE("finite differences on simple functions") {
    const auto square = [](const Tensor& t) { return t[0] * t[0]; };
    const Tensor g = finite_diff_grad(square, Tensor::scalar(3.0), 1e-4);
    CHECK(g[0] == doctest::Approx(6.0).epsilon(1e-7));

    const auto constant = [](const Tensor&) { return 7.5; };
    const Tensor gc = finite_diff_grad(constant, Tensor({3}, {1, 2, 3}), 1e-4);
    for (int i = 0; i < 3; ++i) CHECK(gc[i] == 0.0);

    CHECK_THROWS_AS(finite_diff_grad(square, Tensor::scalar(1.0), 0.0), std::invalid_argument);
}

TEST_CASE("grad_check on a linear model is exact to rounding") {
    const Tensor theta({2}, {3.0, -1.5});
    const Tensor x({2}, {0.7, 0.2});
    auto f = [&](const std::vector<Tensor>& p) {
        return EvalResult{p[0][0] * x[0] + p[0][1] * x[1],
                          std::numeric_limits<double>::infinity()};
    };
    const GradCheckReport rep = grad_check(f, {theta}, {x}, 1e-4, 1e-10);
    CHECK(rep.pass);
    CHECK(rep.coords_checked == 2);
    CHECK(rep.max_rel_err <= 1e-10);
}

TEST_CASE("grad_check excludes near-kink coordinates") {
    // |t| has a kink at 0; the closure reports the distance to it
    auto f = [](const std::vector<Tensor>& p) {
        return EvalResult{std::abs(p[0][0]), std::abs(p[0][0])};
    };
    const Tensor at_kink({1}, {1e-6});
    const Tensor wrong_grad({1}, {0.0});
    const GradCheckReport rep = grad_check(f, {at_kink}, {wrong_grad}, 1e-4, 1e-5);
    CHECK(rep.coords_excluded == 1);
    CHECK(rep.coords_checked == 0);
}

TEST_CASE("tape primitives agree with finite differences") {
    // one composite graph touching conv, pooling, gates and losses
    RngStream rng(11, 3);
    Tensor kernel({2, 1, 2});
    for (int i = 0; i < kernel.size(); ++i) kernel[i] = rng.gaussian();
    Tensor w({2, 2});
    for (int i = 0; i < w.size(); ++i) w[i] = rng.gaussian();
    Tensor x({1, 5});
    for (int i = 0; i < x.size(); ++i) x[i] = rng.gaussian();

    auto value = [&](const Tensor& k, const Tensor& wm) {
        Tape t;
        const int kp = t.param(k);
        const int wp = t.param(wm);
        const int xin = t.input(x);
        const int q = t.conv1d(kp, xin);
        const int s = t.sigmoid_gate(q, 2.0);
        const int z = t.mul(q, s);
        const int pooled = t.gap(z);
        const int logits = t.matvec(wp, pooled);
        const int loss = t.softmax_ce(logits, 1);
        return std::pair<Tape, int>(std::move(t), loss);
    };

    auto [tape, loss] = value(kernel, w);
    const auto grads = tape.backward(loss);
    const Tensor gk = grads.begin()->second;

    const double h = 1e-5;
    Tensor k2 = kernel;
    for (int i = 0; i < kernel.size(); ++i) {
        k2[i] = kernel[i] + h;
        auto [tp, lp] = value(k2, w);
        k2[i] = kernel[i] - h;
        auto [tm, lm] = value(k2, w);
        k2[i] = kernel[i];
        const double fd = (tp.value(lp)[0] - tm.value(lm)[0]) / (2 * h);
        CHECK(gk[i] == doctest::Approx(fd).epsilon(1e-5));
    }
}
