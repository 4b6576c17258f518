#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "galu/autodiff.hpp"
#include "galu/tensor.hpp"

namespace galu {

enum class ArchKind { FC, CONV_GAP, RESNET };
enum class Pooling { AVG, MAX };

/// Declarative architecture description. Only the fields of the active kind
/// are meaningful; validate() rejects inconsistent combinations.
struct ArchSpec {
    ArchKind kind = ArchKind::FC;
    int d_in = 0;
    int w = 0;
    int out_dim = 1;
    int d = 0;            // FC: total layers, d-1 hidden + output
    int d_cv = 0;         // conv: convolutional layers
    int w_cv = 0;         // conv: window size, must be < d_in
    int d_fc = 0;         // conv: dense layers after pooling (last is output)
    int b = 0;            // resnet: skip connections; blocks are b+2
    int d_blk = 0;        // resnet: layers per block
    Pooling pooling = Pooling::AVG;
    int pool_window = 0;  // MAX pooling only

    void validate() const;
    int gated_layer_count() const;
    std::vector<int> gate_shape(int gated_layer) const;
    std::string serialize() const;
    static ArchSpec parse(const std::string& text);
    bool operator==(const ArchSpec&) const = default;
};

enum class Family { DNN, DGN, DLGN, DLGN_SHALLOW };
enum class GatingMode { HARD, SOFT };

struct ModelKind {
    Family family = Family::DNN;
    GatingMode gating = GatingMode::HARD;
    double beta = 10.0;  // soft gating steepness
    bool operator==(const ModelKind&) const = default;
};

double gate_fn(double q, GatingMode gating, double beta = 10.0);

/// One parameterized layer in evaluation order.
struct LayerDesc {
    enum class Type { Dense, Conv };
    Type type = Type::Dense;
    int in_dim = 0, out_dim = 0;  // conv: channel counts
    bool gated = false;
    int block = -1;               // resnet block index, -1 elsewhere
};

/// Layers of the architecture itself (value network shape).
std::vector<LayerDesc> layer_plan(const ArchSpec& spec);
/// Layers of the gating network for a family. DLGN_SHALLOW swaps in one
/// independent map from the input per gated layer; other families share the
/// architecture plan.
std::vector<LayerDesc> gating_plan(const ArchSpec& spec, Family family);

enum class InitKind { BERNOULLI_PM_SIGMA, GAUSSIAN_FAN_IN, BERNOULLI_NTK };
struct InitScheme {
    InitKind kind = InitKind::GAUSSIAN_FAN_IN;
    double param = 1.0;  // sigma | c | c_scale
    bool operator==(const InitScheme&) const = default;
};

struct Weights {
    ArchSpec spec;
    std::vector<LayerDesc> plan;
    std::vector<Tensor> layers;  // dense [out,in]; conv [w_cv,c_in,c_out]
    std::string init_tag;

    std::uint64_t content_hash() const;
};

Weights init_weights(const ArchSpec& spec, InitScheme scheme, RngStream& rng);
Weights init_gating_weights(const ArchSpec& spec, Family family, InitScheme scheme, RngStream& rng);

void save_checkpoint(const Weights& w, std::uint64_t seed, const std::string& path);
Weights load_checkpoint(const std::string& path, std::uint64_t* seed_out = nullptr);

/// Per gated layer: [w] dense gates, [d_in, w] conv gates (position-major).
struct GateStack {
    std::vector<Tensor> gates;
    bool hard = true;
};

struct ForwardResult {
    Tensor output;
    GateStack gates;
    std::vector<Tensor> preacts;  // one per gated layer
};

ForwardResult forward_dnn(const Weights& w, const Tensor& x);
ForwardResult forward_conv_gap(const Weights& w, const Tensor& x, const GateStack* external = nullptr);
ForwardResult forward_resnet(const Weights& w, const Tensor& x, const GateStack* external = nullptr);

/// Gates produced by a gating network for input x, per model family.
GateStack gates_of(const Weights& theta_f, const Tensor& x, const ModelKind& kind);

/// GaLU evaluation of the value network under externally supplied gates.
Tensor forward_gated(const Weights& theta_v, const Tensor& x_w, const GateStack& gates);

GateStack apply_permutation(const GateStack& gates, const std::vector<int>& perm);

/// Replaces skippable block j (1-based, in [1..b]) by the zero map.
Weights drop_block(const Weights& w, int j);

/// A full model: value weights plus, for gated families, the gating weights.
enum class ValueInput { SAME, ONES, ZEROS };

struct Model {
    ArchSpec spec;
    ModelKind kind;
    Weights value;
    std::optional<Weights> gating;
    ValueInput value_input = ValueInput::SAME;
    std::vector<int> gate_perm;  // empty = identity

    Tensor value_net_input(const Tensor& x) const;
};

Model make_model(const ArchSpec& spec, ModelKind kind, InitScheme scheme, RngStream& rng);
Tensor model_forward(const Model& m, const Tensor& x);

/// Smallest |preactivation| over the hard gates encountered for x
/// (gating-network preacts for gated families, own preacts for DNN).
/// Infinity when gating is soft.
double min_hard_gate_preact(const Model& m, const Tensor& x);

/// Tape construction for training and NTK work. Parameters are registered
/// once; logits subgraphs are then appended per sample against those ids.
/// With gating params registered and soft gating, the gating network lives
/// on the tape and gradient flows through the gate signal; under hard gating
/// the gates enter as constants and registered gating params keep zero
/// gradients.
enum class TapeParams { VALUE_ONLY, VALUE_AND_GATING };

struct TapeModel {
    Tape tape;
    std::vector<int> value_param_ids;
    std::vector<int> gating_param_ids;
};

TapeModel begin_tape(const Model& m, TapeParams which);
/// Appends one sample's forward pass; returns the logits node id.
int tape_logits(TapeModel& tm, const Model& m, const Tensor& x);

}  // namespace galu
