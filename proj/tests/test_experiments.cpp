#include "doctest.h"

#include <cmath>
#include <stdexcept>

#include "galu/data_io.hpp"
#include "galu/experiments.hpp"

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

// one-parameter linear model: loss is exactly (theta - 1)^2 on {x=1, y=+1}
Model scalar_model(double theta0) {
    Model m;
    m.spec = fc(1, 1, 2);
    m.kind = {Family::DNN, GatingMode::HARD, 10.0};
    m.value.spec = m.spec;
    m.value.plan = {LayerDesc{LayerDesc::Type::Dense, 1, 1, false, -1}};
    m.value.layers = {Tensor({1, 1}, {theta0})};
    return m;
}

Dataset one_point() {
    Dataset d;
    d.inputs = Tensor({1, 1}, {1.0});
    d.labels = {1};
    d.classes = 2;
    return d;
}

}  // namespace

TEST_CASE("descent on a quadratic bowl below and above the stability threshold") {
    // gradient descent on (theta-1)^2 contracts iff lr < 1
    TrainConfig cfg;
    cfg.optimizer = TrainConfig::Opt::SGD_MOMENTUM;
    cfg.momentum = 0.0;
    cfg.loss = TrainConfig::Loss::MSE;
    cfg.batch_size = 1;
    cfg.epochs = 20;

    cfg.lr = 0.4;
    auto [m_ok, res_ok] = train(scalar_model(5.0), one_point(), one_point(), cfg);
    for (size_t e = 1; e < res_ok.train_loss.size(); ++e)
        CHECK(res_ok.train_loss[e] < res_ok.train_loss[e - 1]);
    CHECK(std::abs(m_ok.value.layers[0][0] - 1.0) < 1e-3);

    cfg.lr = 1.5;
    auto [m_bad, res_bad] = train(scalar_model(5.0), one_point(), one_point(), cfg);
    CHECK(res_bad.train_loss.back() > res_bad.train_loss.front());
}

TEST_CASE("adam also settles the bowl for small steps") {
    TrainConfig cfg;
    cfg.optimizer = TrainConfig::Opt::ADAM;
    cfg.lr = 0.05;
    cfg.loss = TrainConfig::Loss::MSE;
    cfg.batch_size = 1;
    cfg.epochs = 40;
    auto [m, res] = train(scalar_model(3.0), one_point(), one_point(), cfg);
    CHECK(res.train_loss.back() < 0.05 * res.train_loss.front());
}

TEST_CASE("training mode preconditions") {
    const ArchSpec spec = fc(4, 8, 3, 2);
    const Dataset all = gen_synthetic(SynthKind::GAUSSIAN_BLOBS, 64, 4, 2, 0.5, 1);
    auto [tr, te] = split_dataset(all, 48);
    TrainConfig cfg;
    cfg.epochs = 1;

    RngStream r1(3, 0);
    Model hard_st = make_model(spec, {Family::DGN, GatingMode::HARD, 10.0},
                               {InitKind::GAUSSIAN_FAN_IN, 1.0}, r1);
    cfg.mode = TrainConfig::Mode::ST;
    CHECK_THROWS_AS(train(hard_st, tr, te, cfg), std::invalid_argument);

    RngStream r2(3, 0);
    Model soft_pg = make_model(spec, {Family::DGN, GatingMode::SOFT, 10.0},
                               {InitKind::GAUSSIAN_FAN_IN, 1.0}, r2);
    cfg.mode = TrainConfig::Mode::PG;
    CHECK_THROWS_AS(train(soft_pg, tr, te, cfg), std::invalid_argument);
}

TEST_CASE("zero epochs leaves the model untouched") {
    const ArchSpec spec = fc(4, 8, 3, 2);
    const Dataset all = gen_synthetic(SynthKind::GAUSSIAN_BLOBS, 64, 4, 2, 0.5, 1);
    auto [tr, te] = split_dataset(all, 48);
    RngStream rng(4, 0);
    Model m = make_model(spec, {Family::DGN, GatingMode::SOFT, 10.0},
                         {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);
    const std::uint64_t before = m.value.content_hash();
    TrainConfig cfg;
    cfg.epochs = 0;
    auto [m2, res] = train(std::move(m), tr, te, cfg);
    CHECK(m2.value.content_hash() == before);
    CHECK(res.test_accuracy == evaluate_accuracy(m2, te));
}

TEST_CASE("standalone training reaches high accuracy on blobs") {
    // default optimizer settings: adam, lr 3e-4, batch 32
    const ArchSpec spec = fc(8, 16, 4, 2);
    const Dataset all = gen_synthetic(SynthKind::GAUSSIAN_BLOBS, 384, 8, 2, 0.5, 7);
    auto [tr, te] = split_dataset(all, 256);
    TrainConfig cfg;
    cfg.epochs = 50;
    cfg.seed = 7;
    RngStream rng(7, 0);
    Model m = make_model(spec, {Family::DGN, GatingMode::SOFT, 10.0},
                         {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);
    auto [trained, res] = train(std::move(m), tr, te, cfg);
    CHECK(res.test_accuracy >= 0.95);
    // loss trend is non-increasing on a 3-epoch moving average
    const auto& L = res.train_loss;
    for (size_t e = 3; e + 3 <= L.size(); e += 3) {
        const double early = (L[e - 3] + L[e - 2] + L[e - 1]) / 3;
        const double late = (L[e] + L[e + 1] + L[e + 2]) / 3;
        CHECK(late <= early + 0.05);
    }
}

TEST_CASE("identity permutation trains identically to no permutation") {
    const ArchSpec spec = fc(4, 8, 3, 2);
    const Dataset all = gen_synthetic(SynthKind::GAUSSIAN_BLOBS, 96, 4, 2, 0.5, 5);
    auto [tr, te] = split_dataset(all, 64);
    TrainConfig cfg;
    cfg.epochs = 4;
    cfg.seed = 5;

    RngStream r1(6, 0), r2(6, 0);
    Model plain = make_model(spec, {Family::DGN, GatingMode::SOFT, 10.0},
                             {InitKind::GAUSSIAN_FAN_IN, 1.0}, r1);
    Model permuted = make_model(spec, {Family::DGN, GatingMode::SOFT, 10.0},
                                {InitKind::GAUSSIAN_FAN_IN, 1.0}, r2);
    permuted.gate_perm = {0, 1};
    const RunResult a = train(std::move(plain), tr, te, cfg).second;
    const RunResult b = train(std::move(permuted), tr, te, cfg).second;
    CHECK(a.weight_hash == b.weight_hash);
}

TEST_CASE("permutation sweep rejects unequal gate shapes") {
    ArchSpec spec;
    spec.kind = ArchKind::CONV_GAP;
    spec.d_in = 5;
    spec.w_cv = 2;
    spec.d_cv = 1;
    spec.w = 2;
    spec.d_fc = 2;  // conv gates [d_in, w] against dense gates [w]
    const Dataset all = gen_synthetic(SynthKind::GAUSSIAN_BLOBS, 64, 5, 2, 0.5, 1);
    auto [tr, te] = split_dataset(all, 48);
    TrainConfig cfg;
    cfg.epochs = 1;
    CHECK_THROWS_AS(permutation_sweep(spec, Family::DGN, tr, te, cfg), std::invalid_argument);
}

TEST_CASE("allones wiring") {
    const ArchSpec spec = fc(4, 8, 3, 2);
    const Dataset all = gen_synthetic(SynthKind::GAUSSIAN_BLOBS, 96, 4, 2, 0.5, 5);
    auto [tr, te] = split_dataset(all, 64);
    TrainConfig cfg;
    cfg.epochs = 2;
    CHECK_THROWS_AS(run_allones(spec, Family::DNN, tr, te, cfg), std::invalid_argument);
    const AllonesPair pair = run_allones(spec, Family::DLGN, tr, te, cfg);
    CHECK(pair.gap_points >= 0.0);
    CHECK(pair.with_input.weight_hash != 0);
}

TEST_CASE("dropping a zero block changes nothing") {
    ArchSpec spec;
    spec.kind = ArchKind::RESNET;
    spec.d_in = 4;
    spec.w = 4;
    spec.b = 2;
    spec.d_blk = 1;
    spec.out_dim = 2;
    RngStream rng(8, 0);
    Model m = make_model(spec, {Family::DGN, GatingMode::HARD, 10.0},
                         {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);
    // zero out skippable block 2 in both networks up front
    m.value = drop_block(m.value, 2);
    m.gating = drop_block(*m.gating, 2);

    const Dataset all = gen_synthetic(SynthKind::GAUSSIAN_BLOBS, 96, 4, 2, 0.5, 2);
    auto [tr, te] = split_dataset(all, 64);
    const auto rows = block_drop_eval(m, te);
    REQUIRE(rows.size() == 2);
    CHECK(rows[1].block == 2);
    CHECK(rows[1].delta_points == 0.0);

    ArchSpec flat = spec;
    flat.b = 0;
    RngStream rng2(8, 1);
    Model none = make_model(flat, {Family::DGN, GatingMode::HARD, 10.0},
                            {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng2);
    CHECK(block_drop_eval(none, te).empty());
}

TEST_CASE("max-pooling conv variant trains end to end") {
    // linear gating network, max pooling in both networks
    ArchSpec spec;
    spec.kind = ArchKind::CONV_GAP;
    spec.d_in = 6;
    spec.w_cv = 2;
    spec.d_cv = 2;
    spec.w = 4;
    spec.d_fc = 2;
    spec.out_dim = 2;
    spec.pooling = Pooling::MAX;
    spec.pool_window = 3;

    const Dataset all = gen_synthetic(SynthKind::GAUSSIAN_BLOBS, 128, 6, 2, 0.5, 6);
    auto [tr, te] = split_dataset(all, 96);
    TrainConfig cfg;
    cfg.lr = 3e-3;
    cfg.epochs = 30;
    cfg.seed = 6;
    RngStream rng(6, 0);
    Model m = make_model(spec, {Family::DLGN, GatingMode::SOFT, 10.0},
                         {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);
    auto [trained, res] = train(std::move(m), tr, te, cfg);
    CHECK(res.test_accuracy >= 0.9);

    // exact path algebra is defined for average pooling only
    GateStack dummy;
    CHECK_THROWS_AS(npf(Tensor::ones({6}), dummy, spec), std::logic_error);
    CHECK_THROWS_AS(npv(trained.value), std::logic_error);
}

TEST_CASE("resnets absorb a dropped block better than a plain chain") {
    // removing a residual block leaves the skip path; removing a layer from
    // a multiplicative chain kills the signal outright
    ArchSpec rs;
    rs.kind = ArchKind::RESNET;
    rs.d_in = 8;
    rs.w = 12;
    rs.b = 2;
    rs.d_blk = 1;
    rs.out_dim = 2;
    ArchSpec flat;
    flat.kind = ArchKind::FC;
    flat.d_in = 8;
    flat.w = 12;
    flat.d = 4;  // depth matched to (b+2)*d_blk
    flat.out_dim = 2;

    TrainConfig cfg;
    cfg.epochs = 20;
    double res_delta = 0.0, fc_delta = 0.0;
    for (std::uint64_t s = 0; s < 3; ++s) {
        cfg.seed = 40 + s;
        const Dataset all = gen_synthetic(SynthKind::GAUSSIAN_BLOBS, 384, 8, 2, 1.0, cfg.seed);
        auto [tr, te] = split_dataset(all, 256);

        RngStream r1(cfg.seed, 1);
        Model res_model = make_model(rs, {Family::DGN, GatingMode::SOFT, 10.0},
                                     {InitKind::GAUSSIAN_FAN_IN, 1.0}, r1);
        res_model = train(std::move(res_model), tr, te, cfg).first;
        res_model.kind.gating = GatingMode::HARD;  // test-time evaluation
        const auto rows = block_drop_eval(res_model, te);
        res_delta += rows[0].delta_points;

        RngStream r2(cfg.seed, 2);
        Model fc_model = make_model(flat, {Family::DGN, GatingMode::SOFT, 10.0},
                                    {InitKind::GAUSSIAN_FAN_IN, 1.0}, r2);
        fc_model = train(std::move(fc_model), tr, te, cfg).first;
        fc_model.kind.gating = GatingMode::HARD;
        const double full = evaluate_accuracy(fc_model, te);
        // zero the layer at the same depth position as the dropped block
        Model cut = fc_model;
        cut.value.layers[1] = Tensor::zeros(cut.value.layers[1].shape());
        cut.gating->layers[1] = Tensor::zeros(cut.gating->layers[1].shape());
        fc_delta += 100.0 * (full - evaluate_accuracy(cut, te));
    }
    CHECK(res_delta / 3 < fc_delta / 3);
}
