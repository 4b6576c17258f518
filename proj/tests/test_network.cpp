#include "doctest.h"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <stdexcept>

#include "galu/network.hpp"

using namespace galu;

namespace {

ArchSpec fc(int d_in, int w, int d, int out_dim = 1) {
    ArchSpec s;
    s.kind = ArchKind::FC;
    s.d_in = d_in;
    s.w = w;
    s.d = d;
    s.out_dim = out_dim;
    return s;
}

}  // namespace

TEST_CASE("sign-flip init draws only +/- sigma") {
    const ArchSpec spec = fc(1, 2, 2);
    RngStream rng(5, 0);
    const Weights w = init_weights(spec, {InitKind::BERNOULLI_PM_SIGMA, 0.5}, rng);
    for (const Tensor& t : w.layers)
        for (int i = 0; i < t.size(); ++i) CHECK(std::abs(t[i]) == 0.5);

    RngStream r1(42, 3), r2(42, 3);
    const Weights a = init_weights(spec, {InitKind::BERNOULLI_PM_SIGMA, 0.5}, r1);
    const Weights b = init_weights(spec, {InitKind::BERNOULLI_PM_SIGMA, 0.5}, r2);
    CHECK(a.content_hash() == b.content_hash());
}

TEST_CASE("sign-flip draws are balanced") {
    RngStream rng(7, 1);
    double sum = 0.0;
    const double sigma = 0.25;
    for (int i = 0; i < 100000; ++i) sum += rng.pm_sigma(sigma);
    const double mean = sum / 100000;
    CHECK(std::abs(mean) <= 0.01 * sigma);
}

TEST_CASE("gate function hard and soft") {
    CHECK(gate_fn(0.5, GatingMode::HARD) == 1.0);
    CHECK(gate_fn(-0.3, GatingMode::HARD) == 0.0);
    CHECK(gate_fn(0.0, GatingMode::HARD) == 0.0);
    CHECK(gate_fn(0.0, GatingMode::SOFT, 10.0) == 0.5);
    CHECK(gate_fn(1.0, GatingMode::SOFT, 10.0) == doctest::Approx(0.9999546).epsilon(1e-7));
    CHECK_THROWS_AS(gate_fn(1.0, GatingMode::SOFT, 0.0), std::invalid_argument);
}

TEST_CASE("fc forward matches the hand-worked 1-2-1 net") {
    const ArchSpec spec = fc(1, 2, 2);
    Weights w;
    w.spec = spec;
    w.plan = layer_plan(spec);
    w.layers = {Tensor({2, 1}, {1, -1}), Tensor({1, 2}, {1, 1})};

    const ForwardResult r = forward_dnn(w, Tensor({1}, {2}));
    CHECK(r.output[0] == 2.0);
    CHECK(r.preacts[0][0] == 2.0);
    CHECK(r.preacts[0][1] == -2.0);
    CHECK(r.gates.gates[0][0] == 1.0);
    CHECK(r.gates.gates[0][1] == 0.0);
}

TEST_CASE("zero input gives zero output and zero gates") {
    RngStream rng(9, 0);
    const Weights w = init_weights(fc(3, 4, 3), {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);
    const ForwardResult r = forward_dnn(w, Tensor({3}));
    CHECK(r.output[0] == 0.0);
    for (const Tensor& g : r.gates.gates)
        for (int i = 0; i < g.size(); ++i) CHECK(g[i] == 0.0);
}

TEST_CASE("all-positive weights and input keep every gate on") {
    const ArchSpec spec = fc(2, 2, 3);
    Weights w;
    w.spec = spec;
    w.plan = layer_plan(spec);
    w.layers = {Tensor({2, 2}, {0.5, 0.25, 0.75, 1.0}), Tensor({2, 2}, {1, 1, 1, 1}),
                Tensor({1, 2}, {1, 1})};
    const ForwardResult r = forward_dnn(w, Tensor({2}, {1, 2}));
    for (const Tensor& g : r.gates.gates)
        for (int i = 0; i < g.size(); ++i) CHECK(g[i] == 1.0);
    // with gates on everywhere the net is the plain product of its maps
    const double z10 = 0.5 * 1 + 0.25 * 2, z11 = 0.75 * 1 + 1.0 * 2;
    CHECK(r.output[0] == doctest::Approx(2 * (z10 + z11)));
}

TEST_CASE("linear gating chain composes its maps") {
    const ArchSpec spec = fc(2, 2, 3);
    Weights theta;
    theta.spec = spec;
    theta.plan = layer_plan(spec);
    const Tensor a1({2, 2}, {1, 2, -1, 0.5});
    const Tensor a2({2, 2}, {0.5, -1, 2, 1});
    theta.layers = {a1, a2, Tensor({1, 2}, {1, 1})};

    const Tensor x({2}, {1.5, -2});
    const GateStack g = gates_of(theta, x, {Family::DLGN, GatingMode::HARD, 10.0});
    const Tensor q2 = matvec(a2, matvec(a1, x));
    for (int j = 0; j < 2; ++j) CHECK(g.gates[1][j] == (q2[j] > 0 ? 1.0 : 0.0));
}

TEST_CASE("relu and linear gating nets agree on nonnegative regimes and differ otherwise") {
    const ArchSpec spec = fc(2, 3, 3);
    RngStream rng(21, 0);
    Weights theta = init_weights(spec, {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);
    for (Tensor& t : theta.layers)
        for (int i = 0; i < t.size(); ++i) t[i] = std::abs(t[i]);

    const Tensor x({2}, {0.5, 1.5});
    const GateStack relu_gates = gates_of(theta, x, {Family::DGN, GatingMode::HARD, 10.0});
    const GateStack lin_gates = gates_of(theta, x, {Family::DLGN, GatingMode::HARD, 10.0});
    for (size_t l = 0; l < relu_gates.gates.size(); ++l)
        for (int j = 0; j < relu_gates.gates[l].size(); ++j)
            CHECK(relu_gates.gates[l][j] == lin_gates.gates[l][j]);

    // a witness input with a negative first-layer preactivation separates them
    RngStream rng2(22, 0);
    bool found_witness = false;
    for (int trial = 0; trial < 50 && !found_witness; ++trial) {
        const Weights wt = init_weights(spec, {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng2);
        Tensor xx({2});
        xx[0] = rng2.gaussian();
        xx[1] = rng2.gaussian();
        const Tensor q1 = matvec(wt.layers[0], xx);
        bool neg = false;
        for (int j = 0; j < q1.size(); ++j) neg = neg || q1[j] < 0;
        if (!neg) continue;
        const GateStack a = gates_of(wt, xx, {Family::DGN, GatingMode::HARD, 10.0});
        const GateStack b = gates_of(wt, xx, {Family::DLGN, GatingMode::HARD, 10.0});
        for (int j = 0; j < a.gates[1].size(); ++j)
            if (a.gates[1][j] != b.gates[1][j]) found_witness = true;
    }
    CHECK(found_witness);
}

TEST_CASE("externally gated forward on the toy four-path net") {
    const ArchSpec spec = fc(1, 2, 3);
    Weights v;
    v.spec = spec;
    v.plan = layer_plan(spec);
    // layer matrices are written [out][in]
    v.layers = {Tensor({2, 1}, {1, -1}), Tensor({2, 2}, {1, -0.5, 0.5, 1}),
                Tensor({1, 2}, {1, 1})};
    GateStack gates;
    gates.gates = {Tensor({2}, {1, 0}), Tensor({2}, {1, 1})};

    const Tensor y = forward_gated(v, Tensor({1}, {2}), gates);
    CHECK(y[0] == doctest::Approx(3.0));

    GateStack all_on;
    all_on.gates = {Tensor({2}, {1, 1}), Tensor({2}, {1, 1})};
    const Tensor lin = forward_gated(v, Tensor({1}, {2}), all_on);
    const Tensor manual = matvec(v.layers[2], matvec(v.layers[1], matvec(v.layers[0], Tensor({1}, {2}))));
    CHECK(lin[0] == manual[0]);

    GateStack dead;
    dead.gates = {Tensor({2}, {0, 0}), Tensor({2}, {1, 1})};
    CHECK(forward_gated(v, Tensor({1}, {2}), dead)[0] == 0.0);
}

TEST_CASE("conv forward gates rotate with the input") {
    ArchSpec spec;
    spec.kind = ArchKind::CONV_GAP;
    spec.d_in = 6;
    spec.w_cv = 2;
    spec.d_cv = 2;
    spec.w = 3;
    spec.d_fc = 1;
    RngStream rng(31, 0);
    const Weights w = init_weights(spec, {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);
    Tensor x({6});
    for (int i = 0; i < 6; ++i) x[i] = rng.gaussian();

    const ForwardResult base = forward_conv_gap(w, x);
    const int r = 2;
    const ForwardResult rot = forward_conv_gap(w, rotate(x, r));
    for (int l = 0; l < spec.d_cv; ++l)
        for (int p = 1; p <= 6; ++p)
            for (int c = 0; c < 3; ++c)
                CHECK(rot.gates.gates[l].at2(p - 1, c) ==
                      base.gates.gates[l].at2(circ_add(p, r, 6) - 1, c));
}

TEST_CASE("conv forward simple cases") {
    ArchSpec spec;
    spec.kind = ArchKind::CONV_GAP;
    spec.d_in = 4;
    spec.w_cv = 2;
    spec.d_cv = 1;
    spec.w = 1;
    spec.d_fc = 1;
    Weights w;
    w.spec = spec;
    w.plan = layer_plan(spec);
    w.layers = {Tensor({2, 1, 1}, {1, 0}), Tensor({1, 1}, {1})};

    const Tensor x({4}, {1, 2, 3, 4});
    const ForwardResult r = forward_conv_gap(w, x);
    for (int p = 0; p < 4; ++p) CHECK(r.gates.gates[0].at2(p, 0) == 1.0);
    CHECK(r.output[0] == doctest::Approx(2.5));

    CHECK(forward_conv_gap(w, Tensor({4})).output[0] == 0.0);
}

TEST_CASE("resnet forward structure") {
    ArchSpec spec;
    spec.kind = ArchKind::RESNET;
    spec.d_in = 3;
    spec.w = 3;
    spec.b = 2;
    spec.d_blk = 1;
    RngStream rng(41, 0);
    const Weights w = init_weights(spec, {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);
    Tensor x({3});
    for (int i = 0; i < 3; ++i) x[i] = rng.gaussian();

    // zeroing every skippable block leaves first-into-last composition
    Weights stripped = w;
    for (int j = 1; j <= spec.b; ++j) stripped = drop_block(stripped, j);
    ArchSpec two;
    two.kind = ArchKind::RESNET;
    two.d_in = 3;
    two.w = 3;
    two.b = 0;
    two.d_blk = 1;
    Weights first_last;
    first_last.spec = two;
    first_last.plan = layer_plan(two);
    first_last.layers = {w.layers.front(), w.layers.back()};
    CHECK(forward_dnn(stripped, x).output[0] == forward_dnn(first_last, x).output[0]);

    // dropping and restoring is exact
    const Weights dropped = drop_block(w, 1);
    CHECK(dropped.content_hash() != w.content_hash());
    CHECK(forward_dnn(w, x).output[0] == forward_dnn(w, x).output[0]);
    CHECK_THROWS_AS(drop_block(w, 0), std::invalid_argument);
    CHECK_THROWS_AS(drop_block(w, 3), std::invalid_argument);
}

TEST_CASE("gate permutations") {
    GateStack g;
    g.gates = {Tensor({2}, {1, 0}), Tensor({2}, {0, 0}), Tensor({2}, {1, 1}),
               Tensor({2}, {0, 1})};

    const GateStack same = apply_permutation(g, {0, 1, 2, 3});
    for (size_t l = 0; l < 4; ++l)
        for (int j = 0; j < 2; ++j) CHECK(same.gates[l][j] == g.gates[l][j]);

    const GateStack rev = apply_permutation(g, {3, 2, 1, 0});
    for (size_t l = 0; l < 4; ++l)
        for (int j = 0; j < 2; ++j) CHECK(rev.gates[l][j] == g.gates[3 - l][j]);

    CHECK_THROWS_AS(apply_permutation(g, {0, 1, 2}), std::invalid_argument);
    CHECK_THROWS_AS(apply_permutation(g, {0, 0, 2, 3}), std::invalid_argument);

    GateStack uneven;
    uneven.gates = {Tensor({2}, {1, 0}), Tensor({3}, {1, 1, 1})};
    CHECK_THROWS_AS(apply_permutation(uneven, {1, 0}), std::invalid_argument);
}

TEST_CASE("checkpoints round-trip bit-exactly") {
    const ArchSpec spec = fc(3, 4, 3, 2);
    RngStream rng(51, 0);
    const Weights w = init_weights(spec, {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);
    const std::string path = "/tmp/galu_test_ckpt.bin";
    save_checkpoint(w, 99, path);
    std::uint64_t seed = 0;
    const Weights back = load_checkpoint(path, &seed);
    CHECK(seed == 99);
    CHECK(back.content_hash() == w.content_hash());
    CHECK(back.spec == spec);
    REQUIRE(back.layers.size() == w.layers.size());
    for (size_t l = 0; l < w.layers.size(); ++l)
        for (int i = 0; i < w.layers[l].size(); ++i) CHECK(back.layers[l][i] == w.layers[l][i]);
    std::filesystem::remove(path);
}

TEST_CASE("value input modes") {
    const ArchSpec spec = fc(3, 4, 3);
    RngStream rng(61, 0);
    Model m = make_model(spec, {Family::DGN, GatingMode::HARD, 10.0},
                         {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);
    Tensor x({3}, {0.3, -0.7, 1.1});

    m.value_input = ValueInput::ZEROS;
    CHECK(model_forward(m, x)[0] == 0.0);

    m.value_input = ValueInput::ONES;
    const double y_ones = model_forward(m, x)[0];
    m.value_input = ValueInput::SAME;
    const double y_same = model_forward(m, x)[0];
    CHECK(y_ones != y_same);  // generic weights
}
