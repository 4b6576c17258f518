#pragma once

#include <cstdint>
#include <functional>
#include <vector>

#include "galu/network.hpp"
#include "galu/tensor.hpp"

namespace galu {

/// Discrete coordinates of one path from an input node to the output.
/// All indices are 0-based. For conv architectures `window_idx` and
/// `spatial_idx` give the window choice and resulting spatial position per
/// convolutional layer; `layer_nodes` holds the unit (filter) chosen in each
/// gated layer. For resnets `subset_tag` is the bitmask of traversed
/// skippable blocks.
struct PathIndexMap {
    int input_node = 0;
    std::vector<int> layer_nodes;
    std::vector<int> window_idx;
    std::vector<int> spatial_idx;
    std::uint32_t subset_tag = 0;
};

constexpr std::uint64_t kDefaultPathCap = 10'000'000ull;

std::uint64_t count_paths(const ArchSpec& spec);

/// Visits every path exactly once in lexicographic order. Throws when the
/// total exceeds `cap`, naming the count.
void enumerate_paths(const ArchSpec& spec, const std::function<void(const PathIndexMap&)>& visit,
                     std::uint64_t cap = kDefaultPathCap);
std::vector<PathIndexMap> collect_paths(const ArchSpec& spec, std::uint64_t cap = kDefaultPathCap);

/// Number of paths per bundle equals d_in; bundles partition the conv paths.
std::uint64_t count_bundles(const ArchSpec& spec);

/// Product of the hard gate bits along a path (pooling masks excluded).
double path_activity(const GateStack& gates, const PathIndexMap& p, const ArchSpec& spec);

/// Neural path features. FC/resnet: one entry per path, phi(p) =
/// x(input node) * activity(p). Conv: one entry per bundle, summed over the
/// bundle's members. Requires hard gates.
Tensor npf(const Tensor& x, const GateStack& gates, const ArchSpec& spec,
           std::uint64_t cap = kDefaultPathCap);

/// Neural path values: per path (or bundle) the product of traversed
/// weights; skip connections contribute factor 1 and the conv pooling mask
/// contributes 1/d_in once per bundle. `logit` selects the output row.
Tensor npv(const Weights& weights, int logit = 0, std::uint64_t cap = kDefaultPathCap);

/// Per-path tags for resnet NPF/NPV vectors, in enumeration order.
std::vector<std::uint32_t> path_subset_tags(const ArchSpec& spec,
                                            std::uint64_t cap = kDefaultPathCap);

struct GatingNet {
    ArchSpec spec;
    ModelKind kind;  // family + gating mode for gate extraction
    Weights theta;
};

GatingNet make_gating_net(const ArchSpec& spec, Family family, InitScheme scheme, RngStream& rng,
                          GatingMode mode = GatingMode::HARD, double beta = 10.0);
GateStack gates_for(const GatingNet& g, const Tensor& x);

/// The dual route to the network output: sum over paths of phi * v.
double output_via_paths(const Tensor& x, const GatingNet& gating, const Weights& value,
                        int logit = 0, std::uint64_t cap = kDefaultPathCap);

/// Counts of paths simultaneously active for two hard gate stacks.
struct OverlapTable {
    std::uint64_t total = 0;
    std::vector<std::uint64_t> per_node;  // indexed by input node
};

OverlapTable overlap(const GateStack& gx, const GateStack& gy, const ArchSpec& spec,
                     std::uint64_t cap = kDefaultPathCap);

void dump_path_vectors_csv(const Tensor& phi, const Tensor& v, const std::string& path);
void dump_overlap_csv(const OverlapTable& table, const std::string& path);

}  // namespace galu
