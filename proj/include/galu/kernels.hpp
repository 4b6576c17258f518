#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "galu/network.hpp"
#include "galu/paths.hpp"
#include "galu/tensor.hpp"

namespace galu {

enum class Provenance { NPK_BRUTE, NPK_CLOSED, NTK_EMPIRICAL };

std::string provenance_name(Provenance p);

struct GramMatrix {
    int n = 0;
    std::vector<double> data;  // row-major n*n
    Provenance provenance = Provenance::NPK_BRUTE;
    std::string spec;          // serialized architecture

    static GramMatrix empty(int n, Provenance prov, const ArchSpec& spec);
    double at(int i, int j) const { return data[static_cast<size_t>(i * n + j)]; }
    double& at(int i, int j) { return data[static_cast<size_t>(i * n + j)]; }
    double trace() const;
    double max_asymmetry() const;
    std::uint64_t spec_hash() const;
};

/// Eigenvalues of a symmetric matrix, ascending (cyclic Jacobi).
std::vector<double> symmetric_eigenvalues(const GramMatrix& g);

/// Gram of neural path features, straight from the definition via path (or
/// bundle) enumeration. The independent oracle for the closed forms below.
GramMatrix npk_bruteforce(const GatingNet& gating, const std::vector<Tensor>& X,
                          std::uint64_t cap = kDefaultPathCap);

/// Per-layer gate correlation, an exact integer: sum over units of both
/// gates being on.
std::uint64_t gate_correlation(const Tensor& gx, const Tensor& gy);

/// Product form for fully connected nets: <x,x'> times the product of
/// per-layer gate correlations.
GramMatrix npk_fc_product(const std::vector<GateStack>& stacks, const std::vector<Tensor>& X,
                          const ArchSpec& spec);

/// Per-input-node counts of bundles jointly active for two conv gate
/// stacks, computed layer by layer without enumerating paths.
std::vector<std::uint64_t> conv_overlap_per_node(const GateStack& gx, const GateStack& gy,
                                                 const ArchSpec& spec);

/// Rotation-sum form for circular-conv + GAP nets.
GramMatrix npk_conv_rotsum(const GatingNet& gating, const std::vector<Tensor>& X);

constexpr int kDefaultEnsembleCap = 12;

struct ResnetEnsemble {
    GramMatrix total;
    std::map<std::uint32_t, GramMatrix> components;  // keyed by block subset bitmask
};

/// Ensemble form for resnets: per block subset, the product-form kernel of
/// that sub-network, summed.
ResnetEnsemble npk_res_ensemble(const GatingNet& gating, const std::vector<Tensor>& X,
                                int ensemble_cap = kDefaultEnsembleCap);

enum class ParamScope { VALUE_NET, ALL };

/// Gram matrix of output gradients. Multi-logit outputs contribute one
/// gradient per logit, summed.
GramMatrix empirical_ntk(const Model& m, const std::vector<Tensor>& X,
                         ParamScope scope = ParamScope::VALUE_NET);

struct LimitConstants {
    double c_scale = 1.0;
    double sigma = 0.0;     // c / sqrt(w)
    double sigma_cv = 0.0;  // c / sqrt(w * w_cv)
    double sigma_fc = 0.0;
    double fc_const = 0.0;  // d * sigma^(2(d-1))
    double beta_cv = 0.0;
    double conv_const = 0.0;  // beta_cv / d_in^2
    std::vector<double> beta_res;  // indexed by |J| = 0..b
};

LimitConstants limit_constants(const ArchSpec& spec, double c_scale);

struct RatioStudyRow {
    int width = 0;
    double mean_abs_dev = 0.0;
    int pairs_retained = 0;
};

/// Width sweep of |NTK / (const * NPK) - 1| for hard-gated models with
/// sign-flip value-net init. Pairs whose |NPK| falls below
/// 1e-6 * median(|NPK|) are dropped; when every pair is dropped the inputs
/// are degenerate and the study refuses to report.
/// `inputs` overrides the built-in input generator (clustered nonnegative
/// unit vectors) when non-null.
std::vector<RatioStudyRow> ntk_npk_ratio_study(const ArchSpec& base, const std::vector<int>& widths,
                                               int n_inputs, int seeds, double c_scale,
                                               std::uint64_t seed,
                                               const std::vector<Tensor>* inputs = nullptr);

/// Ridge solution (K + lambda I)^-1 y applied to a test block.
/// k_test_train is [n_test, n_train].
std::vector<double> kernel_ridge_predict(const GramMatrix& k_train, const std::vector<double>& y,
                                         const Tensor& k_test_train, double lambda);

}  // namespace galu
