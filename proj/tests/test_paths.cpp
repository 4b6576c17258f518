#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <stdexcept>

#include "galu/paths.hpp"

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

ArchSpec conv(int d_in, int w_cv, int d_cv, int w, int d_fc) {
    ArchSpec s;
    s.kind = ArchKind::CONV_GAP;
    s.d_in = d_in;
    s.w_cv = w_cv;
    s.d_cv = d_cv;
    s.w = w;
    s.d_fc = d_fc;
    return s;
}

ArchSpec res(int d_in, int w, int b, int d_blk) {
    ArchSpec s;
    s.kind = ArchKind::RESNET;
    s.d_in = d_in;
    s.w = w;
    s.b = b;
    s.d_blk = d_blk;
    return s;
}

// the worked four-path example: one input, two layers of two units
struct ToyNet {
    ArchSpec spec = fc(1, 2, 3);
    Weights value;
    GateStack gates;

    ToyNet() {
        value.spec = spec;
        value.plan = layer_plan(spec);
        value.layers = {Tensor({2, 1}, {1, -1}), Tensor({2, 2}, {1, -0.5, 0.5, 1}),
                        Tensor({1, 2}, {1, 1})};
        gates.gates = {Tensor({2}, {1, 0}), Tensor({2}, {1, 1})};
    }
};

}  // namespace

TEST_CASE("path counts match the closed formulas") {
    CHECK(count_paths(fc(2, 3, 3)) == 18);
    CHECK(count_paths(conv(4, 2, 2, 3, 1)) == 144);
    CHECK(count_paths(res(1, 2, 1, 1)) == 6);

    std::uint64_t tally = 0;
    enumerate_paths(conv(4, 2, 2, 3, 1), [&](const PathIndexMap&) { ++tally; });
    CHECK(tally == 144);
}

TEST_CASE("enumeration is exact and tagged") {
    CHECK(collect_paths(fc(1, 2, 2)).size() == 2);
    CHECK(collect_paths(fc(1, 2, 3)).size() == 4);

    std::map<std::uint32_t, int> tags;
    for (const PathIndexMap& p : collect_paths(res(1, 2, 2, 1))) ++tags[p.subset_tag];
    REQUIRE(tags.size() == 4);
    CHECK(tags[0] == 2);   // w^(2*1-1)
    CHECK(tags[1] == 4);   // w^(3*1-1)
    CHECK(tags[2] == 4);
    CHECK(tags[3] == 8);   // w^(4*1-1)
}

TEST_CASE("enumeration cap raises a capacity error naming the count") {
    try {
        enumerate_paths(fc(2, 4, 4), [](const PathIndexMap&) {}, 10);
        FAIL("expected a capacity error");
    } catch (const std::length_error& e) {
        CHECK(std::string(e.what()).find("128") != std::string::npos);
    }
}

TEST_CASE("path activity on the toy net") {
    const ToyNet toy;
    const auto paths = collect_paths(toy.spec);
    REQUIRE(paths.size() == 4);
    // lexicographic: (0,0), (0,1), (1,0), (1,1)
    CHECK(path_activity(toy.gates, paths[0], toy.spec) == 1.0);
    CHECK(path_activity(toy.gates, paths[1], toy.spec) == 1.0);
    CHECK(path_activity(toy.gates, paths[2], toy.spec) == 0.0);
    CHECK(path_activity(toy.gates, paths[3], toy.spec) == 0.0);

    GateStack all_on;
    all_on.gates = {Tensor({2}, {1, 1}), Tensor({2}, {1, 1})};
    for (const auto& p : paths) CHECK(path_activity(all_on, p, toy.spec) == 1.0);

    GateStack soft;
    soft.gates = all_on.gates;
    soft.hard = false;
    CHECK_THROWS_AS(path_activity(soft, paths[0], toy.spec), std::logic_error);
}

TEST_CASE("path features and values on the toy net") {
    const ToyNet toy;
    const Tensor x({1}, {2});
    const Tensor phi = npf(x, toy.gates, toy.spec);
    REQUIRE(phi.size() == 4);
    CHECK(phi[0] == 2.0);
    CHECK(phi[1] == 2.0);
    CHECK(phi[2] == 0.0);
    CHECK(phi[3] == 0.0);

    const Tensor v = npv(toy.value);
    REQUIRE(v.size() == 4);
    CHECK(v[0] == doctest::Approx(1.0));
    CHECK(v[1] == doctest::Approx(0.5));
    CHECK(v[2] == doctest::Approx(0.5));
    CHECK(v[3] == doctest::Approx(-1.0));

    CHECK(dot(phi, v) == doctest::Approx(3.0));

    // a zeroed layer annihilates every path value
    Weights zeroed = toy.value;
    zeroed.layers[1] = Tensor::zeros({2, 2});
    const Tensor vz = npv(zeroed);
    for (int i = 0; i < vz.size(); ++i) CHECK(vz[i] == 0.0);
}

TEST_CASE("constant-ones input turns features into activities") {
    const ArchSpec spec = fc(3, 3, 3);
    RngStream rng(71, 0);
    const GatingNet g = make_gating_net(spec, Family::DGN, {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);
    Tensor x({3});
    for (int i = 0; i < 3; ++i) x[i] = rng.gaussian();
    const GateStack gates = gates_for(g, x);

    const Tensor phi = npf(Tensor::ones({3}), gates, spec);
    std::uint64_t idx = 0;
    enumerate_paths(spec, [&](const PathIndexMap& p) {
        CHECK(phi[static_cast<int>(idx++)] == path_activity(gates, p, spec));
    });
}

TEST_CASE("dual route equals the forward pass across seeds") {
    const ArchSpec spec = fc(2, 4, 3);
    for (int s = 0; s < 100; ++s) {
        RngStream rng(800 + s, 0);
        const GatingNet g = make_gating_net(spec, s % 2 ? Family::DGN : Family::DLGN,
                                            {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);
        const Weights v = init_weights(spec, {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);
        Tensor x({2});
        x[0] = rng.gaussian();
        x[1] = rng.gaussian();
        const double direct = forward_gated(v, x, gates_for(g, x))[0];
        const double dual = output_via_paths(x, g, v);
        CHECK(std::abs(direct - dual) <= 1e-10);
    }
}

TEST_CASE("overlap counts joint activity") {
    const ArchSpec spec = fc(1, 2, 3);
    GateStack on;
    on.gates = {Tensor({2}, {1, 1}), Tensor({2}, {1, 1})};
    const OverlapTable all = overlap(on, on, spec);
    CHECK(all.total == 4);
    CHECK(all.per_node[0] == 4);

    GateStack gx, gy;
    gx.gates = {Tensor({2}, {1, 0}), Tensor({2}, {1, 1})};
    gy.gates = {Tensor({2}, {1, 1}), Tensor({2}, {0, 1})};
    CHECK(overlap(gx, gy, spec).total == 1);

    GateStack ga, gb;
    ga.gates = {Tensor({2}, {1, 0}), Tensor({2}, {1, 1})};
    gb.gates = {Tensor({2}, {0, 1}), Tensor({2}, {1, 1})};
    CHECK(overlap(ga, gb, spec).total == 0);
}

TEST_CASE("fc per-node overlap is uniform across input nodes") {
    const ArchSpec spec = fc(4, 3, 3);
    RngStream rng(81, 0);
    const GatingNet g = make_gating_net(spec, Family::DGN, {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);
    Tensor x({4}), y({4});
    for (int i = 0; i < 4; ++i) {
        x[i] = rng.gaussian();
        y[i] = rng.gaussian();
    }
    const OverlapTable t = overlap(gates_for(g, x), gates_for(g, y), spec);
    for (int i = 1; i < 4; ++i) CHECK(t.per_node[static_cast<size_t>(i)] == t.per_node[0]);
    CHECK(t.total == 4 * t.per_node[0]);
}

TEST_CASE("conv bundles partition the paths into groups of d_in") {
    const ArchSpec spec = conv(5, 2, 2, 2, 2);
    const std::uint64_t nb = count_bundles(spec);
    CHECK(nb * 5 == count_paths(spec));

    std::vector<int> members(static_cast<size_t>(nb), 0);
    std::uint64_t rank = 0;
    enumerate_paths(spec, [&](const PathIndexMap&) { ++members[static_cast<size_t>(rank++ % nb)]; });
    for (int m : members) CHECK(m == 5);

    CHECK_THROWS_AS(count_bundles(fc(2, 2, 2)), std::invalid_argument);
}

TEST_CASE("conv spatial indices follow the window shifts") {
    const ArchSpec spec = conv(4, 2, 2, 1, 1);
    enumerate_paths(spec, [&](const PathIndexMap& p) {
        int pos = p.input_node;
        for (int l = 0; l < 2; ++l) {
            pos = (pos - p.window_idx[static_cast<size_t>(l)] + 4) % 4;
            CHECK(p.spatial_idx[static_cast<size_t>(l)] == pos);
        }
    });
}

TEST_CASE("path vectors and overlap tables dump to csv") {
    const ToyNet toy;
    const Tensor phi = npf(Tensor({1}, {2}), toy.gates, toy.spec);
    const Tensor v = npv(toy.value);
    dump_path_vectors_csv(phi, v, "/tmp/galu_phi_v.csv");
    dump_overlap_csv(overlap(toy.gates, toy.gates, toy.spec), "/tmp/galu_overlap.csv");
    std::ifstream a("/tmp/galu_phi_v.csv"), b("/tmp/galu_overlap.csv");
    std::string line;
    std::getline(a, line);
    CHECK(line == "path,phi,v");
    std::getline(b, line);
    CHECK(line == "node,count");
    std::filesystem::remove("/tmp/galu_phi_v.csv");
    std::filesystem::remove("/tmp/galu_overlap.csv");
}

TEST_CASE("dual route holds per logit for multi-output heads") {
    RngStream rng(121, 0);

    ArchSpec fc_spec = fc(3, 3, 3);
    fc_spec.out_dim = 3;
    ArchSpec conv_spec = conv(4, 2, 1, 2, 2);
    conv_spec.out_dim = 2;
    ArchSpec res_spec_ = res(2, 2, 1, 1);
    res_spec_.out_dim = 2;

    for (const ArchSpec& spec : {fc_spec, conv_spec, res_spec_}) {
        const GatingNet g =
            make_gating_net(spec, Family::DGN, {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);
        const Weights value = init_weights(spec, {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);
        Tensor x({spec.d_in});
        for (int i = 0; i < spec.d_in; ++i) x[i] = rng.gaussian();
        const Tensor y = forward_gated(value, x, gates_for(g, x));
        for (int k = 0; k < spec.out_dim; ++k)
            CHECK(std::abs(y[k] - output_via_paths(x, g, value, k)) <= 1e-10);
    }
}
