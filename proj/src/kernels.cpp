#include "galu/kernels.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <stdexcept>

#include "galu/hash.hpp"

namespace galu {

std::string provenance_name(Provenance p) {
    switch (p) {
        case Provenance::NPK_BRUTE: return "NPK_BRUTE";
        case Provenance::NPK_CLOSED: return "NPK_CLOSED";
        case Provenance::NTK_EMPIRICAL: return "NTK_EMPIRICAL";
    }
    return "?";
}

GramMatrix GramMatrix::empty(int n, Provenance prov, const ArchSpec& spec) {
    GramMatrix g;
    g.n = n;
    g.data.assign(static_cast<size_t>(n) * n, 0.0);
    g.provenance = prov;
    g.spec = spec.serialize();
    return g;
}

double GramMatrix::trace() const {
    double t = 0.0;
    for (int i = 0; i < n; ++i) t += at(i, i);
    return t;
}

double GramMatrix::max_asymmetry() const {
    double m = 0.0;
    for (int i = 0; i < n; ++i)
        for (int j = i + 1; j < n; ++j) m = std::max(m, std::abs(at(i, j) - at(j, i)));
    return m;
}

std::uint64_t GramMatrix::spec_hash() const {
    Fnv1a h;
    h.str(spec);
    return h.state;
}

std::vector<double> symmetric_eigenvalues(const GramMatrix& g) {
    const int n = g.n;
    std::vector<double> a = g.data;
    auto A = [&](int i, int j) -> double& { return a[static_cast<size_t>(i * n + j)]; };

    for (int sweep = 0; sweep < 100; ++sweep) {
        double off = 0.0;
        for (int i = 0; i < n; ++i)
            for (int j = i + 1; j < n; ++j) off += A(i, j) * A(i, j);
        if (off < 1e-24) break;
        for (int p = 0; p < n - 1; ++p)
            for (int q = p + 1; q < n; ++q) {
                if (std::abs(A(p, q)) < 1e-300) continue;
                const double theta = (A(q, q) - A(p, p)) / (2.0 * A(p, q));
                const double t = (theta >= 0 ? 1.0 : -1.0) /
                                 (std::abs(theta) + std::sqrt(theta * theta + 1.0));
                const double c = 1.0 / std::sqrt(t * t + 1.0);
                const double s = t * c;
                for (int k = 0; k < n; ++k) {
                    const double akp = A(k, p), akq = A(k, q);
                    A(k, p) = c * akp - s * akq;
                    A(k, q) = s * akp + c * akq;
                }
                for (int k = 0; k < n; ++k) {
                    const double apk = A(p, k), aqk = A(q, k);
                    A(p, k) = c * apk - s * aqk;
                    A(q, k) = s * apk + c * aqk;
                }
            }
    }
    std::vector<double> eig(static_cast<size_t>(n));
    for (int i = 0; i < n; ++i) eig[static_cast<size_t>(i)] = A(i, i);
    std::sort(eig.begin(), eig.end());
    return eig;
}

GramMatrix npk_bruteforce(const GatingNet& gating, const std::vector<Tensor>& X,
                          std::uint64_t cap) {
    const int n = static_cast<int>(X.size());
    GramMatrix g = GramMatrix::empty(n, Provenance::NPK_BRUTE, gating.spec);
    std::vector<Tensor> phis;
    phis.reserve(X.size());
    for (const Tensor& x : X)
        phis.push_back(npf(x, gates_for(gating, x), gating.spec, cap));
    for (int a = 0; a < n; ++a)
        for (int b = a; b < n; ++b) {
            const double v = dot(phis[static_cast<size_t>(a)], phis[static_cast<size_t>(b)]);
            g.at(a, b) = v;
            g.at(b, a) = v;
        }
    return g;
}

std::uint64_t gate_correlation(const Tensor& gx, const Tensor& gy) {
    if (gx.size() != gy.size()) throw std::invalid_argument("gate_correlation: shape mismatch");
    std::uint64_t c = 0;
    for (int i = 0; i < gx.size(); ++i)
        if (gx[i] > 0.5 && gy[i] > 0.5) ++c;
    return c;
}

GramMatrix npk_fc_product(const std::vector<GateStack>& stacks, const std::vector<Tensor>& X,
                          const ArchSpec& spec) {
    if (spec.kind != ArchKind::FC)
        throw std::logic_error("npk_fc_product: product form applies to FC architectures");
    if (stacks.size() != X.size())
        throw std::invalid_argument("npk_fc_product: one gate stack per input required");
    for (const GateStack& s : stacks)
        if (!s.hard) throw std::logic_error("npk_fc_product: hard gates required");

    const int n = static_cast<int>(X.size());
    GramMatrix g = GramMatrix::empty(n, Provenance::NPK_CLOSED, spec);
    for (int a = 0; a < n; ++a)
        for (int b = a; b < n; ++b) {
            // the gate product is accumulated as an exact integer first, so
            // the result is invariant under any layer reordering
            std::uint64_t prod = 1;
            for (size_t l = 0; l < stacks[static_cast<size_t>(a)].gates.size(); ++l)
                prod *= gate_correlation(stacks[static_cast<size_t>(a)].gates[l],
                                         stacks[static_cast<size_t>(b)].gates[l]);
            const double v =
                dot(X[static_cast<size_t>(a)], X[static_cast<size_t>(b)]) * static_cast<double>(prod);
            g.at(a, b) = v;
            g.at(b, a) = v;
        }
    return g;
}

std::vector<std::uint64_t> conv_overlap_per_node(const GateStack& gx, const GateStack& gy,
                                                 const ArchSpec& spec) {
    if (spec.kind != ArchKind::CONV_GAP)
        throw std::logic_error("conv_overlap_per_node: conv architectures only");
    if (spec.pooling != Pooling::AVG)
        throw std::logic_error("conv_overlap_per_node: global average pooling only");
    if (!gx.hard || !gy.hard) throw std::logic_error("conv_overlap_per_node: hard gates required");

    const int d = spec.d_in, w = spec.w;

    // joint fully connected completions are shared by every start node
    std::uint64_t fc_factor = 1;
    for (int m = 0; m < spec.d_fc - 1; ++m)
        fc_factor *= gate_correlation(gx.gates[static_cast<size_t>(spec.d_cv + m)],
                                      gy.gates[static_cast<size_t>(spec.d_cv + m)]);

    std::vector<std::uint64_t> per_node(static_cast<size_t>(d), 0);
    for (int start = 0; start < d; ++start) {
        // counts of active joint partial bundles, summed over channels
        std::vector<std::uint64_t> reach(static_cast<size_t>(d), 0);
        reach[static_cast<size_t>(start)] = 1;
        for (int l = 0; l < spec.d_cv; ++l) {
            const Tensor& jx = gx.gates[static_cast<size_t>(l)];
            const Tensor& jy = gy.gates[static_cast<size_t>(l)];
            std::vector<std::uint64_t> next(static_cast<size_t>(d), 0);
            for (int pos = 0; pos < d; ++pos) {
                std::uint64_t from = 0;
                for (int k = 0; k < spec.w_cv; ++k) from += reach[static_cast<size_t>((pos + k) % d)];
                if (from == 0) continue;
                std::uint64_t on = 0;
                for (int c = 0; c < w; ++c)
                    if (jx.at2(pos, c) > 0.5 && jy.at2(pos, c) > 0.5) ++on;
                next[static_cast<size_t>(pos)] = from * on;
            }
            reach.swap(next);
        }
        std::uint64_t conv_count = 0;
        for (std::uint64_t r : reach) conv_count += r;
        per_node[static_cast<size_t>(start)] = conv_count * fc_factor;
    }
    return per_node;
}

GramMatrix npk_conv_rotsum(const GatingNet& gating, const std::vector<Tensor>& X) {
    const ArchSpec& spec = gating.spec;
    if (spec.kind != ArchKind::CONV_GAP)
        throw std::logic_error("npk_conv_rotsum: conv architectures only");
    const int n = static_cast<int>(X.size());
    const int d = spec.d_in;

    // gates of every rotation of every input
    std::vector<std::vector<GateStack>> rot_gates(static_cast<size_t>(n));
    for (int a = 0; a < n; ++a) {
        rot_gates[static_cast<size_t>(a)].reserve(static_cast<size_t>(d));
        for (int r = 0; r < d; ++r)
            rot_gates[static_cast<size_t>(a)].push_back(
                gates_for(gating, rotate(X[static_cast<size_t>(a)], r)));
    }

    GramMatrix g = GramMatrix::empty(n, Provenance::NPK_CLOSED, spec);
    for (int a = 0; a < n; ++a)
        for (int b = a; b < n; ++b) {
            double acc = 0.0;
            for (int r = 0; r < d; ++r) {
                const Tensor xr = rotate(X[static_cast<size_t>(b)], r);
                const std::vector<std::uint64_t> lam = conv_overlap_per_node(
                    rot_gates[static_cast<size_t>(a)][0], rot_gates[static_cast<size_t>(b)][static_cast<size_t>(r)],
                    spec);
                for (int i = 0; i < d; ++i)
                    acc += X[static_cast<size_t>(a)][i] * xr[i] * static_cast<double>(lam[static_cast<size_t>(i)]);
            }
            g.at(a, b) = acc;
            g.at(b, a) = acc;
        }
    return g;
}

ResnetEnsemble npk_res_ensemble(const GatingNet& gating, const std::vector<Tensor>& X,
                                int ensemble_cap) {
    const ArchSpec& spec = gating.spec;
    if (spec.kind != ArchKind::RESNET)
        throw std::logic_error("npk_res_ensemble: resnet architectures only");
    if (spec.b > ensemble_cap)
        throw std::length_error("npk_res_ensemble: " + std::to_string(1u << spec.b) +
                                " components exceed the ensemble cap (b <= " +
                                std::to_string(ensemble_cap) + ")");

    const int n = static_cast<int>(X.size());
    std::vector<GateStack> stacks;
    stacks.reserve(X.size());
    for (const Tensor& x : X) {
        GateStack s = gates_for(gating, x);
        if (!s.hard) throw std::logic_error("npk_res_ensemble: hard gates required");
        stacks.push_back(std::move(s));
    }

    // gated layer indices per traversed block subset
    auto layers_for = [&](std::uint32_t tag) {
        std::vector<size_t> layers;
        auto push_block = [&](int blk) {
            const int gates_in_block = blk == spec.b + 1 ? spec.d_blk - 1 : spec.d_blk;
            for (int l = 0; l < gates_in_block; ++l)
                layers.push_back(static_cast<size_t>(blk * spec.d_blk + l));
        };
        push_block(0);
        for (int j = 1; j <= spec.b; ++j)
            if (tag & (1u << (j - 1))) push_block(j);
        push_block(spec.b + 1);
        return layers;
    };

    ResnetEnsemble out;
    out.total = GramMatrix::empty(n, Provenance::NPK_CLOSED, spec);
    for (std::uint32_t tag = 0; tag < (1u << spec.b); ++tag) {
        GramMatrix comp = GramMatrix::empty(n, Provenance::NPK_CLOSED, spec);
        const std::vector<size_t> layers = layers_for(tag);
        for (int a = 0; a < n; ++a)
            for (int b2 = a; b2 < n; ++b2) {
                std::uint64_t prod = 1;
                for (size_t l : layers)
                    prod *= gate_correlation(stacks[static_cast<size_t>(a)].gates[l],
                                             stacks[static_cast<size_t>(b2)].gates[l]);
                const double v = dot(X[static_cast<size_t>(a)], X[static_cast<size_t>(b2)]) *
                                 static_cast<double>(prod);
                comp.at(a, b2) = v;
                comp.at(b2, a) = v;
            }
        for (size_t i = 0; i < comp.data.size(); ++i) out.total.data[i] += comp.data[i];
        out.components.emplace(tag, std::move(comp));
    }
    return out;
}

namespace {

// flat gradient of one logit w.r.t. the scoped parameters
std::vector<double> flat_gradient(const Model& m, const Tensor& x, int logit, TapeParams which) {
    TapeModel tm = begin_tape(m, which);
    const int logits = tape_logits(tm, m, x);
    const int out = tm.tape.select(logits, logit);
    auto grads = tm.tape.backward(out);

    std::vector<double> flat;
    auto append = [&](const std::vector<int>& ids) {
        for (int id : ids) {
            const Tensor& g = grads.at(id);
            flat.insert(flat.end(), g.data(), g.data() + g.size());
        }
    };
    append(tm.value_param_ids);
    append(tm.gating_param_ids);
    return flat;
}

}  // namespace

GramMatrix empirical_ntk(const Model& m, const std::vector<Tensor>& X, ParamScope scope) {
    const int n = static_cast<int>(X.size());
    GramMatrix g = GramMatrix::empty(n, Provenance::NTK_EMPIRICAL, m.spec);
    const TapeParams which = scope == ParamScope::ALL && m.kind.family != Family::DNN
                                 ? TapeParams::VALUE_AND_GATING
                                 : TapeParams::VALUE_ONLY;

    std::vector<std::vector<std::vector<double>>> grads(static_cast<size_t>(n));
    for (int a = 0; a < n; ++a)
        for (int k = 0; k < m.spec.out_dim; ++k)
            grads[static_cast<size_t>(a)].push_back(
                flat_gradient(m, X[static_cast<size_t>(a)], k, which));

    for (int a = 0; a < n; ++a)
        for (int b = a; b < n; ++b) {
            double acc = 0.0;
            for (int k = 0; k < m.spec.out_dim; ++k) {
                const auto& ga = grads[static_cast<size_t>(a)][static_cast<size_t>(k)];
                const auto& gb = grads[static_cast<size_t>(b)][static_cast<size_t>(k)];
                for (size_t i = 0; i < ga.size(); ++i) acc += ga[i] * gb[i];
            }
            g.at(a, b) = acc;
            g.at(b, a) = acc;
        }
    return g;
}

LimitConstants limit_constants(const ArchSpec& spec, double c_scale) {
    spec.validate();
    if (c_scale <= 0) throw std::invalid_argument("limit_constants: c_scale must be positive");
    LimitConstants lc;
    lc.c_scale = c_scale;
    lc.sigma = c_scale / std::sqrt(static_cast<double>(spec.w));
    lc.sigma_fc = lc.sigma;
    switch (spec.kind) {
        case ArchKind::FC:
            lc.fc_const = spec.d * std::pow(lc.sigma, 2.0 * (spec.d - 1));
            break;
        case ArchKind::CONV_GAP: {
            lc.sigma_cv = c_scale / std::sqrt(static_cast<double>(spec.w) * spec.w_cv);
            lc.beta_cv = spec.d_cv * std::pow(lc.sigma_cv, 2.0 * (spec.d_cv - 1)) *
                             std::pow(lc.sigma_fc, 2.0 * spec.d_fc) +
                         spec.d_fc * std::pow(lc.sigma_cv, 2.0 * spec.d_cv) *
                             std::pow(lc.sigma_fc, 2.0 * (spec.d_fc - 1));
            lc.conv_const = lc.beta_cv / (static_cast<double>(spec.d_in) * spec.d_in);
            break;
        }
        case ArchKind::RESNET:
            for (int i = 0; i <= spec.b; ++i)
                lc.beta_res.push_back((i + 2) * spec.d_blk *
                                      std::pow(lc.sigma, 2.0 * ((i + 2) * spec.d_blk - 1)));
            break;
    }
    return lc;
}

namespace {

double median_abs(const GramMatrix& g) {
    std::vector<double> v;
    v.reserve(g.data.size());
    for (double x : g.data) v.push_back(std::abs(x));
    std::sort(v.begin(), v.end());
    return v[v.size() / 2];
}

// reference kernel that the NTK should approach for a given architecture
GramMatrix limit_reference(const GatingNet& gating, const std::vector<Tensor>& X,
                           const LimitConstants& lc) {
    switch (gating.spec.kind) {
        case ArchKind::FC: {
            std::vector<GateStack> stacks;
            for (const Tensor& x : X) stacks.push_back(gates_for(gating, x));
            GramMatrix g = npk_fc_product(stacks, X, gating.spec);
            for (double& v : g.data) v *= lc.fc_const;
            return g;
        }
        case ArchKind::CONV_GAP: {
            GramMatrix g = npk_conv_rotsum(gating, X);
            for (double& v : g.data) v *= lc.conv_const;
            return g;
        }
        case ArchKind::RESNET: {
            ResnetEnsemble e = npk_res_ensemble(gating, X);
            GramMatrix g = GramMatrix::empty(e.total.n, Provenance::NPK_CLOSED, gating.spec);
            for (const auto& [tag, comp] : e.components) {
                const double beta = lc.beta_res[static_cast<size_t>(std::popcount(tag))];
                for (size_t i = 0; i < g.data.size(); ++i) g.data[i] += beta * comp.data[i];
            }
            return g;
        }
    }
    throw std::logic_error("unreachable");
}

}  // namespace

std::vector<RatioStudyRow> ntk_npk_ratio_study(const ArchSpec& base, const std::vector<int>& widths,
                                               int n_inputs, int seeds, double c_scale,
                                               std::uint64_t seed,
                                               const std::vector<Tensor>* inputs) {
    if (n_inputs < 2) throw std::invalid_argument("ratio study needs at least two inputs");

    // random nonnegative unit inputs clustered around the uniform direction,
    // shared across widths and seeds so the rows are comparable; pixel-like
    // positivity keeps every kernel entry bounded away from zero, where the
    // ratio would be pure noise
    std::vector<Tensor> X;
    if (inputs) {
        X = *inputs;
    } else {
        RngStream xin(seed, 7001);
        for (int i = 0; i < n_inputs; ++i) {
            Tensor x({base.d_in});
            double norm = 0.0;
            for (int j = 0; j < base.d_in; ++j) {
                x[j] = 1.0 + 0.5 * std::abs(xin.gaussian());
                norm += x[j] * x[j];
            }
            norm = std::sqrt(norm);
            for (int j = 0; j < base.d_in; ++j) x[j] /= norm;
            X.push_back(std::move(x));
        }
    }

    std::vector<RatioStudyRow> rows;
    for (int w : widths) {
        ArchSpec spec = base;
        spec.w = w;
        const LimitConstants lc = limit_constants(spec, c_scale);

        double dev_sum = 0.0;
        int retained = 0;
        for (int s = 0; s < seeds; ++s) {
            RngStream rg(seed, 100 + static_cast<std::uint64_t>(s));
            Model m;
            m.spec = spec;
            m.kind = ModelKind{Family::DGN, GatingMode::HARD, 10.0};
            m.gating = init_gating_weights(spec, Family::DGN,
                                           {InitKind::GAUSSIAN_FAN_IN, 1.0}, rg);
            m.value = init_weights(spec, {InitKind::BERNOULLI_NTK, c_scale}, rg);

            GatingNet gn{spec, m.kind, *m.gating};
            const GramMatrix ref = limit_reference(gn, X, lc);
            const GramMatrix ntk = empirical_ntk(m, X, ParamScope::VALUE_NET);

            const double floor = 1e-6 * median_abs(ref);
            for (int a = 0; a < ref.n; ++a)
                for (int b = a; b < ref.n; ++b) {
                    if (std::abs(ref.at(a, b)) < floor || ref.at(a, b) == 0.0) continue;
                    dev_sum += std::abs(ntk.at(a, b) / ref.at(a, b) - 1.0);
                    ++retained;
                }
        }
        if (retained == 0)
            throw std::domain_error("ratio study: every input pair fell below the kernel floor");
        rows.push_back({w, dev_sum / retained, retained});
    }
    return rows;
}

std::vector<double> kernel_ridge_predict(const GramMatrix& k_train, const std::vector<double>& y,
                                         const Tensor& k_test_train, double lambda) {
    if (lambda <= 0) throw std::invalid_argument("kernel ridge: lambda must be positive");
    const int n = k_train.n;
    if (static_cast<int>(y.size()) != n)
        throw std::invalid_argument("kernel ridge: label count mismatch");
    if (k_test_train.ndim() != 2 || k_test_train.dim(1) != n)
        throw std::invalid_argument("kernel ridge: test block shape mismatch");

    // Cholesky of K + lambda I
    std::vector<double> L(static_cast<size_t>(n) * n, 0.0);
    auto Lat = [&](int i, int j) -> double& { return L[static_cast<size_t>(i * n + j)]; };
    for (int i = 0; i < n; ++i)
        for (int j = 0; j <= i; ++j) {
            double sum = k_train.at(i, j) + (i == j ? lambda : 0.0);
            for (int k = 0; k < j; ++k) sum -= Lat(i, k) * Lat(j, k);
            if (i == j) {
                if (sum <= 0)
                    throw std::runtime_error("kernel ridge: system is not positive definite");
                Lat(i, j) = std::sqrt(sum);
            } else {
                Lat(i, j) = sum / Lat(j, j);
            }
        }
    // solve L L^T alpha = y
    std::vector<double> alpha(y);
    for (int i = 0; i < n; ++i) {
        for (int k = 0; k < i; ++k) alpha[static_cast<size_t>(i)] -= Lat(i, k) * alpha[static_cast<size_t>(k)];
        alpha[static_cast<size_t>(i)] /= Lat(i, i);
    }
    for (int i = n - 1; i >= 0; --i) {
        for (int k = i + 1; k < n; ++k) alpha[static_cast<size_t>(i)] -= Lat(k, i) * alpha[static_cast<size_t>(k)];
        alpha[static_cast<size_t>(i)] /= Lat(i, i);
    }

    const int n_test = k_test_train.dim(0);
    std::vector<double> pred(static_cast<size_t>(n_test), 0.0);
    for (int t = 0; t < n_test; ++t)
        for (int j = 0; j < n; ++j)
            pred[static_cast<size_t>(t)] += k_test_train.at2(t, j) * alpha[static_cast<size_t>(j)];
    return pred;
}

}  // namespace galu
