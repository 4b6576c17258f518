#include "galu/experiments.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "galu/hash.hpp"

namespace galu {

namespace {

struct Optimizer {
    TrainConfig cfg;
    std::vector<Tensor> m1, m2;  // momentum / adam first & second moments
    int t = 0;

    explicit Optimizer(const TrainConfig& c, const std::vector<Tensor*>& params) : cfg(c) {
        for (const Tensor* p : params) {
            m1.push_back(Tensor::zeros(p->shape()));
            m2.push_back(Tensor::zeros(p->shape()));
        }
    }

    void step(std::vector<Tensor*>& params, const std::vector<Tensor>& grads) {
        ++t;
        for (size_t i = 0; i < params.size(); ++i) {
            Tensor& p = *params[i];
            const Tensor& g = grads[i];
            if (cfg.optimizer == TrainConfig::Opt::SGD_MOMENTUM) {
                for (int j = 0; j < p.size(); ++j) {
                    m1[i][j] = cfg.momentum * m1[i][j] + g[j];
                    p[j] -= cfg.lr * m1[i][j];
                }
            } else {
                const double bc1 = 1.0 - std::pow(cfg.adam_beta1, t);
                const double bc2 = 1.0 - std::pow(cfg.adam_beta2, t);
                for (int j = 0; j < p.size(); ++j) {
                    m1[i][j] = cfg.adam_beta1 * m1[i][j] + (1.0 - cfg.adam_beta1) * g[j];
                    m2[i][j] = cfg.adam_beta2 * m2[i][j] + (1.0 - cfg.adam_beta2) * g[j] * g[j];
                    const double mhat = m1[i][j] / bc1;
                    const double vhat = m2[i][j] / bc2;
                    p[j] -= cfg.lr * mhat / (std::sqrt(vhat) + cfg.adam_eps);
                }
            }
        }
    }
};

Tensor mse_target(int label, int out_dim) {
    if (out_dim == 1) return Tensor::scalar(label == 1 ? 1.0 : -1.0);
    Tensor t({out_dim});
    t[label] = 1.0;
    return t;
}

std::string snapshot_of(const Model& m, const TrainConfig& cfg) {
    std::ostringstream os;
    os << m.spec.serialize() << " family=" << static_cast<int>(m.kind.family)
       << " gating=" << (m.kind.gating == GatingMode::HARD ? "HARD" : "SOFT")
       << " beta=" << m.kind.beta
       << " opt=" << (cfg.optimizer == TrainConfig::Opt::ADAM ? "ADAM" : "SGD_MOMENTUM")
       << " lr=" << cfg.lr << " batch=" << cfg.batch_size << " epochs=" << cfg.epochs
       << " loss=" << (cfg.loss == TrainConfig::Loss::SOFTMAX_CE ? "CE" : "MSE")
       << " mode=" << (cfg.mode == TrainConfig::Mode::ST ? "ST" : "PG") << " seed=" << cfg.seed;
    return os.str();
}

std::uint64_t model_hash(const Model& m) {
    Fnv1a h;
    h.u64(m.value.content_hash());
    if (m.gating) h.u64(m.gating->content_hash());
    return h.state;
}

}  // namespace

double evaluate_accuracy(const Model& m, const Dataset& d) {
    if (d.size() == 0) return 0.0;
    int correct = 0;
    for (int i = 0; i < d.size(); ++i) {
        const Tensor logits = model_forward(m, d.row(i));
        int pred;
        if (logits.size() == 1) {
            pred = logits[0] > 0 ? 1 : 0;
        } else {
            pred = 0;
            for (int k = 1; k < logits.size(); ++k)
                if (logits[k] > logits[pred]) pred = k;
        }
        if (pred == d.labels[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / d.size();
}

std::pair<Model, RunResult> train(Model m, const Dataset& train_set, const Dataset& test_set,
                                  const TrainConfig& cfg) {
    const auto t0 = std::chrono::steady_clock::now();
    const bool gated = m.kind.family != Family::DNN;

    if (gated && cfg.mode == TrainConfig::Mode::ST && m.kind.gating != GatingMode::SOFT)
        throw std::invalid_argument(
            "train: standalone training has no gradient path to the gating network under hard "
            "gating");
    if (gated && cfg.mode == TrainConfig::Mode::PG && m.kind.gating != GatingMode::HARD)
        throw std::invalid_argument("train: pretrained-gates mode runs with hard gating");
    if (train_set.input_dim() != m.spec.d_in)
        throw std::invalid_argument("train: dataset dimension does not match architecture");
    if (cfg.lr <= 0 || cfg.batch_size < 1) throw std::invalid_argument("train: bad optimizer config");
    if (cfg.loss == TrainConfig::Loss::SOFTMAX_CE && m.spec.out_dim < 2)
        throw std::invalid_argument("train: softmax cross-entropy needs out_dim >= 2");

    const bool train_gating = gated && cfg.mode == TrainConfig::Mode::ST;
    RunResult res;
    res.config_snapshot = snapshot_of(m, cfg);

    std::vector<Tensor*> params;
    for (Tensor& t : m.value.layers) params.push_back(&t);
    if (train_gating)
        for (Tensor& t : m.gating->layers) params.push_back(&t);
    Optimizer opt(cfg, params);

    std::vector<int> order(static_cast<size_t>(train_set.size()));
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        RngStream shuffle_rng(cfg.seed, 0xBA7C4 + static_cast<std::uint64_t>(epoch));
        for (int i = static_cast<int>(order.size()) - 1; i > 0; --i)
            std::swap(order[static_cast<size_t>(i)],
                      order[static_cast<size_t>(shuffle_rng.uniform_int(i + 1))]);

        double loss_sum = 0.0;
        int batches = 0;
        for (int start = 0; start < train_set.size(); start += cfg.batch_size) {
            const int end = std::min(start + cfg.batch_size, train_set.size());
            TapeModel tm = begin_tape(m, train_gating ? TapeParams::VALUE_AND_GATING
                                                      : TapeParams::VALUE_ONLY);
            int loss_node = -1;
            for (int i = start; i < end; ++i) {
                const int idx = order[static_cast<size_t>(i)];
                const int logits = tape_logits(tm, m, train_set.row(idx));
                const int label = train_set.labels[static_cast<size_t>(idx)];
                const int sample_loss =
                    cfg.loss == TrainConfig::Loss::SOFTMAX_CE
                        ? tm.tape.softmax_ce(logits, label)
                        : tm.tape.mse(logits, mse_target(label, m.spec.out_dim));
                loss_node = loss_node < 0 ? sample_loss : tm.tape.add(loss_node, sample_loss);
            }
            loss_node = tm.tape.scale(loss_node, 1.0 / (end - start));
            loss_sum += tm.tape.value(loss_node)[0];
            ++batches;

            auto grads = tm.tape.backward(loss_node);
            std::vector<Tensor> ordered;
            for (int id : tm.value_param_ids) ordered.push_back(std::move(grads.at(id)));
            for (int id : tm.gating_param_ids) ordered.push_back(std::move(grads.at(id)));
            opt.step(params, ordered);
        }
        res.train_loss.push_back(batches ? loss_sum / batches : 0.0);
        res.train_acc.push_back(evaluate_accuracy(m, train_set));
    }

    res.test_accuracy = evaluate_accuracy(m, test_set);
    res.weight_hash = model_hash(m);
    res.wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    return {std::move(m), std::move(res)};
}

AllonesPair run_allones(const ArchSpec& spec, Family family, const Dataset& train_set,
                        const Dataset& test_set, const TrainConfig& cfg) {
    if (family != Family::DGN && family != Family::DLGN)
        throw std::invalid_argument("run_allones: family must be DGN or DLGN");

    RngStream rng(cfg.seed, 0xA110);
    const Model base = make_model(spec, ModelKind{family, GatingMode::SOFT, 10.0},
                                  {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);

    Model with_input = base;
    with_input.value_input = ValueInput::SAME;
    Model all_ones = base;
    all_ones.value_input = ValueInput::ONES;

    AllonesPair out;
    out.with_input = train(std::move(with_input), train_set, test_set, cfg).second;
    out.all_ones = train(std::move(all_ones), train_set, test_set, cfg).second;
    out.gap_points = 100.0 * std::abs(out.with_input.test_accuracy - out.all_ones.test_accuracy);
    return out;
}

std::vector<PermutationRun> permutation_sweep(const ArchSpec& spec, Family family,
                                              const Dataset& train_set, const Dataset& test_set,
                                              const TrainConfig& cfg) {
    const int k = spec.gated_layer_count();
    for (int l = 1; l < k; ++l)
        if (spec.gate_shape(l) != spec.gate_shape(0))
            throw std::invalid_argument(
                "permutation_sweep: gated layers have different gate shapes");

    RngStream rng(cfg.seed, 0x5EEE);
    const Model base = make_model(spec, ModelKind{family, GatingMode::SOFT, 10.0},
                                  {InitKind::GAUSSIAN_FAN_IN, 1.0}, rng);

    std::vector<int> perm(static_cast<size_t>(k));
    std::iota(perm.begin(), perm.end(), 0);

    std::vector<PermutationRun> runs;
    do {
        Model m = base;
        bool identity = true;
        for (int l = 0; l < k; ++l) identity = identity && perm[static_cast<size_t>(l)] == l;
        if (!identity) m.gate_perm = perm;
        runs.push_back({perm, train(std::move(m), train_set, test_set, cfg).second});
    } while (std::next_permutation(perm.begin(), perm.end()));
    return runs;
}

std::vector<BlockDropRow> block_drop_eval(const Model& m, const Dataset& test_set) {
    if (m.spec.kind != ArchKind::RESNET)
        throw std::invalid_argument("block_drop_eval: resnet models only");
    std::vector<BlockDropRow> rows;
    if (m.spec.b == 0) return rows;  // nothing to drop

    const double full = evaluate_accuracy(m, test_set);
    for (int j = 1; j <= m.spec.b; ++j) {
        Model dropped = m;
        dropped.value = drop_block(m.value, j);
        if (dropped.gating) dropped.gating = drop_block(*m.gating, j);
        const double acc = evaluate_accuracy(dropped, test_set);
        rows.push_back({j, full, acc, 100.0 * (full - acc)});
    }
    return rows;
}

GramMatrix npk_closed(const GatingNet& gating, const std::vector<Tensor>& X) {
    switch (gating.spec.kind) {
        case ArchKind::FC: {
            std::vector<GateStack> stacks;
            stacks.reserve(X.size());
            for (const Tensor& x : X) stacks.push_back(gates_for(gating, x));
            return npk_fc_product(stacks, X, gating.spec);
        }
        case ArchKind::CONV_GAP:
            return npk_conv_rotsum(gating, X);
        case ArchKind::RESNET:
            return npk_res_ensemble(gating, X).total;
    }
    throw std::logic_error("unreachable");
}

namespace {

double kernel_ridge_accuracy(const GatingNet& gating, const Dataset& train_set,
                             const Dataset& test_set) {
    std::vector<Tensor> all;
    for (int i = 0; i < train_set.size(); ++i) all.push_back(train_set.row(i));
    for (int i = 0; i < test_set.size(); ++i) all.push_back(test_set.row(i));

    const GramMatrix full = npk_closed(gating, all);
    const int n = train_set.size(), t = test_set.size();

    GramMatrix k_train = GramMatrix::empty(n, full.provenance, gating.spec);
    for (int a = 0; a < n; ++a)
        for (int b = 0; b < n; ++b) k_train.at(a, b) = full.at(a, b);
    Tensor k_test({t, n});
    for (int a = 0; a < t; ++a)
        for (int b = 0; b < n; ++b) k_test.at2(a, b) = full.at(n + a, b);

    std::vector<double> y(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) y[static_cast<size_t>(i)] = train_set.labels[static_cast<size_t>(i)] == 1 ? 1.0 : -1.0;

    const double lambda = std::max(1e-3 * k_train.trace() / n, 1e-10);
    const std::vector<double> pred = kernel_ridge_predict(k_train, y, k_test, lambda);

    int correct = 0;
    for (int i = 0; i < t; ++i) {
        const int cls = pred[static_cast<size_t>(i)] > 0 ? 1 : 0;
        if (cls == test_set.labels[static_cast<size_t>(i)]) ++correct;
    }
    return static_cast<double>(correct) / t;
}

}  // namespace

FrFlComparison fr_fl_gate_comparison(const ArchSpec& spec, const Dataset& train_set,
                                     const Dataset& test_set, const TrainConfig& cfg,
                                     int n_seeds) {
    if (train_set.classes != 2)
        throw std::invalid_argument("fr_fl_gate_comparison: binary tasks only");
    FrFlComparison out;

    for (int s = 0; s < n_seeds; ++s) {
        const std::uint64_t seed = cfg.seed + static_cast<std::uint64_t>(s);

        // fixed random gates: untrained gating network
        RngStream fr_rng(seed, 0xF0);
        Model fr;
        fr.spec = spec;
        fr.kind = ModelKind{Family::DGN, GatingMode::HARD, 10.0};
        fr.gating = init_gating_weights(spec, Family::DGN, {InitKind::GAUSSIAN_FAN_IN, 1.0}, fr_rng);
        fr.value = init_weights(spec, {InitKind::GAUSSIAN_FAN_IN, 1.0}, fr_rng);

        // fixed learnt gates: the gating weights come from a DNN trained on the task
        RngStream fl_rng(seed, 0xF1);
        Model pre = make_model(spec, ModelKind{Family::DNN, GatingMode::HARD, 10.0},
                               {InitKind::GAUSSIAN_FAN_IN, 1.0}, fl_rng);
        TrainConfig pre_cfg = cfg;
        pre_cfg.mode = TrainConfig::Mode::ST;
        pre_cfg.seed = seed;
        Model trained_dnn = train(std::move(pre), train_set, test_set, pre_cfg).first;

        Model fl;
        fl.spec = spec;
        fl.kind = ModelKind{Family::DGN, GatingMode::HARD, 10.0};
        fl.gating = trained_dnn.value;           // learnt weights drive the gates
        fl.gating->plan = gating_plan(spec, Family::DGN);
        fl.value = init_weights(spec, {InitKind::GAUSSIAN_FAN_IN, 1.0}, fl_rng);

        TrainConfig pg_cfg = cfg;
        pg_cfg.mode = TrainConfig::Mode::PG;
        pg_cfg.seed = seed;
        out.fr_retrain_acc.push_back(train(fr, train_set, test_set, pg_cfg).second.test_accuracy);
        out.fl_retrain_acc.push_back(train(fl, train_set, test_set, pg_cfg).second.test_accuracy);

        GatingNet fr_gates{spec, fr.kind, *fr.gating};
        GatingNet fl_gates{spec, fl.kind, *fl.gating};
        out.fr_kernel_acc.push_back(kernel_ridge_accuracy(fr_gates, train_set, test_set));
        out.fl_kernel_acc.push_back(kernel_ridge_accuracy(fl_gates, train_set, test_set));
    }

    auto mean = [](const std::vector<double>& v) {
        return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<double>(v.size());
    };
    out.mean_fr_retrain = mean(out.fr_retrain_acc);
    out.mean_fl_retrain = mean(out.fl_retrain_acc);
    out.mean_fr_kernel = mean(out.fr_kernel_acc);
    out.mean_fl_kernel = mean(out.fl_kernel_acc);
    return out;
}

}  // namespace galu
