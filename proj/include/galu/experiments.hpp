#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "galu/dataset.hpp"
#include "galu/kernels.hpp"
#include "galu/network.hpp"

namespace galu {

struct TrainConfig {
    enum class Opt { SGD_MOMENTUM, ADAM };
    enum class Loss { SOFTMAX_CE, MSE };
    enum class Mode { PG, ST };

    Opt optimizer = Opt::ADAM;
    double lr = 3e-4;
    double momentum = 0.9;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_eps = 1e-8;
    int batch_size = 32;
    int epochs = 30;
    Loss loss = Loss::SOFTMAX_CE;
    Mode mode = Mode::ST;
    std::uint64_t seed = 1;

    bool operator==(const TrainConfig&) const = default;
};

struct RunResult {
    std::vector<double> train_loss;  // per epoch
    std::vector<double> train_acc;
    double test_accuracy = 0.0;
    std::string config_snapshot;
    double wall_seconds = 0.0;
    std::uint64_t weight_hash = 0;
};

double evaluate_accuracy(const Model& m, const Dataset& d);

/// Minibatch training. ST mode trains gating and value networks together
/// (soft gating required); PG mode keeps the gating network frozen under
/// hard gates and trains the value network alone.
std::pair<Model, RunResult> train(Model m, const Dataset& train_set, const Dataset& test_set,
                                  const TrainConfig& cfg);

struct AllonesPair {
    RunResult with_input;  // value network sees the sample
    RunResult all_ones;    // value network sees a constant ones vector
    double gap_points = 0.0;
};

AllonesPair run_allones(const ArchSpec& spec, Family family, const Dataset& train_set,
                        const Dataset& test_set, const TrainConfig& cfg);

struct PermutationRun {
    std::vector<int> perm;
    RunResult result;
};

/// One training run per permutation of the gating masks, the identity first.
/// Requires all gated layers to share one gate shape.
std::vector<PermutationRun> permutation_sweep(const ArchSpec& spec, Family family,
                                              const Dataset& train_set, const Dataset& test_set,
                                              const TrainConfig& cfg);

struct BlockDropRow {
    int block = 0;
    double acc_full = 0.0;
    double acc_dropped = 0.0;
    double delta_points = 0.0;
};

/// Test-time removal of each skippable resnet block.
std::vector<BlockDropRow> block_drop_eval(const Model& m, const Dataset& test_set);

struct FrFlComparison {
    std::vector<double> fr_retrain_acc;  // per seed
    std::vector<double> fl_retrain_acc;
    std::vector<double> fr_kernel_acc;
    std::vector<double> fl_kernel_acc;
    double mean_fr_retrain = 0.0, mean_fl_retrain = 0.0;
    double mean_fr_kernel = 0.0, mean_fl_kernel = 0.0;
};

/// Fixed-random vs fixed-learnt gates: retrains the value network against
/// frozen gates from a random vs pretrained gating network, and runs kernel
/// ridge on the corresponding path kernels.
FrFlComparison fr_fl_gate_comparison(const ArchSpec& spec, const Dataset& train_set,
                                     const Dataset& test_set, const TrainConfig& cfg,
                                     int n_seeds = 3);

/// Square path-kernel gram over a set of inputs using the closed form that
/// matches the architecture.
GramMatrix npk_closed(const GatingNet& gating, const std::vector<Tensor>& X);

}  // namespace galu
