#include "galu/paths.hpp"

#include <cmath>
#include <fstream>
#include <stdexcept>
#include <string>

namespace galu {

namespace {

std::uint64_t ipow(std::uint64_t base, int exp) {
    std::uint64_t r = 1;
    for (int i = 0; i < exp; ++i) r *= base;
    return r;
}

std::uint64_t binomial(int n, int k) {
    if (k < 0 || k > n) return 0;
    std::uint64_t r = 1;
    for (int i = 0; i < k; ++i) r = r * static_cast<std::uint64_t>(n - i) / (i + 1);
    return r;
}

// odometer over mixed radices, last digit fastest
bool next_digits(std::vector<int>& digits, const std::vector<int>& radix) {
    for (int i = static_cast<int>(digits.size()) - 1; i >= 0; --i) {
        if (++digits[static_cast<size_t>(i)] < radix[static_cast<size_t>(i)]) return true;
        digits[static_cast<size_t>(i)] = 0;
    }
    return false;
}

void require_hard(const GateStack& gates, const char* who) {
    if (!gates.hard)
        throw std::logic_error(std::string(who) + ": path algebra is defined for hard gates only");
}

void require_avg_pooling(const ArchSpec& spec, const char* who) {
    if (spec.kind == ArchKind::CONV_GAP && spec.pooling != Pooling::AVG)
        throw std::logic_error(std::string(who) +
                               ": path algebra covers global average pooling only");
}

void check_cap(const ArchSpec& spec, std::uint64_t cap, const char* who) {
    const std::uint64_t n = count_paths(spec);
    if (n > cap)
        throw std::length_error(std::string(who) + ": " + std::to_string(n) +
                                " paths exceed the enumeration cap of " + std::to_string(cap));
}

// traversed blocks for a resnet subset tag, in forward order
std::vector<int> traversed_blocks(const ArchSpec& spec, std::uint32_t tag) {
    std::vector<int> blocks{0};
    for (int j = 1; j <= spec.b; ++j)
        if (tag & (1u << (j - 1))) blocks.push_back(j);
    blocks.push_back(spec.b + 1);
    return blocks;
}

int resnet_gated_layers_for(const ArchSpec& spec, std::uint32_t tag) {
    const int nblocks = static_cast<int>(traversed_blocks(spec, tag).size());
    return nblocks * spec.d_blk - 1;
}

}  // namespace

std::uint64_t count_paths(const ArchSpec& spec) {
    spec.validate();
    switch (spec.kind) {
        case ArchKind::FC:
            return static_cast<std::uint64_t>(spec.d_in) * ipow(spec.w, spec.d - 1);
        case ArchKind::CONV_GAP:
            return static_cast<std::uint64_t>(spec.d_in) *
                   ipow(static_cast<std::uint64_t>(spec.w_cv) * spec.w, spec.d_cv) *
                   ipow(spec.w, spec.d_fc - 1);
        case ArchKind::RESNET: {
            std::uint64_t total = 0;
            for (int i = 0; i <= spec.b; ++i)
                total += binomial(spec.b, i) * ipow(spec.w, (i + 2) * spec.d_blk - 1);
            return static_cast<std::uint64_t>(spec.d_in) * total;
        }
    }
    return 0;
}

std::uint64_t count_bundles(const ArchSpec& spec) {
    if (spec.kind != ArchKind::CONV_GAP)
        throw std::invalid_argument("count_bundles: bundles exist for conv architectures only");
    return count_paths(spec) / spec.d_in;
}

void enumerate_paths(const ArchSpec& spec, const std::function<void(const PathIndexMap&)>& visit,
                     std::uint64_t cap) {
    check_cap(spec, cap, "enumerate_paths");
    PathIndexMap p;

    switch (spec.kind) {
        case ArchKind::FC: {
            const int hidden = spec.d - 1;
            std::vector<int> radix(static_cast<size_t>(hidden), spec.w);
            for (int i = 0; i < spec.d_in; ++i) {
                std::vector<int> digits(static_cast<size_t>(hidden), 0);
                do {
                    p.input_node = i;
                    p.layer_nodes = digits;
                    visit(p);
                } while (next_digits(digits, radix));
            }
            break;
        }
        case ArchKind::CONV_GAP: {
            require_avg_pooling(spec, "enumerate_paths");
            std::vector<int> radix;
            for (int l = 0; l < spec.d_cv; ++l) {
                radix.push_back(spec.w_cv);
                radix.push_back(spec.w);
            }
            for (int m = 0; m < spec.d_fc - 1; ++m) radix.push_back(spec.w);
            for (int i = 0; i < spec.d_in; ++i) {
                std::vector<int> digits(radix.size(), 0);
                do {
                    p.input_node = i;
                    p.window_idx.assign(static_cast<size_t>(spec.d_cv), 0);
                    p.spatial_idx.assign(static_cast<size_t>(spec.d_cv), 0);
                    p.layer_nodes.clear();
                    int pos = i;
                    for (int l = 0; l < spec.d_cv; ++l) {
                        const int k = digits[static_cast<size_t>(2 * l)];
                        const int c = digits[static_cast<size_t>(2 * l + 1)];
                        pos = (pos - k + spec.d_in) % spec.d_in;
                        p.window_idx[static_cast<size_t>(l)] = k;
                        p.spatial_idx[static_cast<size_t>(l)] = pos;
                        p.layer_nodes.push_back(c);
                    }
                    for (int m = 0; m < spec.d_fc - 1; ++m)
                        p.layer_nodes.push_back(digits[static_cast<size_t>(2 * spec.d_cv + m)]);
                    visit(p);
                } while (next_digits(digits, radix));
            }
            break;
        }
        case ArchKind::RESNET: {
            for (std::uint32_t tag = 0; tag < (1u << spec.b); ++tag) {
                const int hidden = resnet_gated_layers_for(spec, tag);
                std::vector<int> radix(static_cast<size_t>(hidden), spec.w);
                for (int i = 0; i < spec.d_in; ++i) {
                    std::vector<int> digits(static_cast<size_t>(hidden), 0);
                    do {
                        p.input_node = i;
                        p.layer_nodes = digits;
                        p.subset_tag = tag;
                        visit(p);
                    } while (next_digits(digits, radix));
                }
            }
            break;
        }
    }
}

std::vector<PathIndexMap> collect_paths(const ArchSpec& spec, std::uint64_t cap) {
    std::vector<PathIndexMap> out;
    out.reserve(static_cast<size_t>(count_paths(spec)));
    enumerate_paths(spec, [&](const PathIndexMap& p) { out.push_back(p); }, cap);
    return out;
}

double path_activity(const GateStack& gates, const PathIndexMap& p, const ArchSpec& spec) {
    require_hard(gates, "path_activity");
    switch (spec.kind) {
        case ArchKind::FC: {
            double a = 1.0;
            for (size_t l = 0; l < p.layer_nodes.size(); ++l)
                a *= gates.gates[l][p.layer_nodes[l]];
            return a;
        }
        case ArchKind::CONV_GAP: {
            double a = 1.0;
            for (int l = 0; l < spec.d_cv; ++l)
                a *= gates.gates[static_cast<size_t>(l)].at2(p.spatial_idx[static_cast<size_t>(l)],
                                                             p.layer_nodes[static_cast<size_t>(l)]);
            for (int m = 0; m < spec.d_fc - 1; ++m)
                a *= gates.gates[static_cast<size_t>(spec.d_cv + m)]
                               [p.layer_nodes[static_cast<size_t>(spec.d_cv + m)]];
            return a;
        }
        case ArchKind::RESNET: {
            double a = 1.0;
            size_t t = 0;
            for (int blk : traversed_blocks(spec, p.subset_tag)) {
                const int gates_in_block = blk == spec.b + 1 ? spec.d_blk - 1 : spec.d_blk;
                for (int l = 0; l < gates_in_block; ++l, ++t)
                    a *= gates.gates[static_cast<size_t>(blk * spec.d_blk + l)][p.layer_nodes[t]];
            }
            return a;
        }
    }
    return 0.0;
}

namespace {

// shared enumeration of conv bundles; fn(window/channel digits, fc digits)
void for_each_bundle(const ArchSpec& spec,
                     const std::function<void(const std::vector<int>&)>& fn) {
    std::vector<int> radix;
    for (int l = 0; l < spec.d_cv; ++l) {
        radix.push_back(spec.w_cv);
        radix.push_back(spec.w);
    }
    for (int m = 0; m < spec.d_fc - 1; ++m) radix.push_back(spec.w);
    std::vector<int> digits(radix.size(), 0);
    do {
        fn(digits);
    } while (next_digits(digits, radix));
}

Tensor npf_conv(const Tensor& x, const GateStack& gates, const ArchSpec& spec) {
    const std::uint64_t nb = count_bundles(spec);
    Tensor phi({static_cast<int>(nb)});
    std::uint64_t idx = 0;
    for_each_bundle(spec, [&](const std::vector<int>& digits) {
        double fc_act = 1.0;
        for (int m = 0; m < spec.d_fc - 1; ++m)
            fc_act *= gates.gates[static_cast<size_t>(spec.d_cv + m)]
                                 [digits[static_cast<size_t>(2 * spec.d_cv + m)]];
        double acc = 0.0;
        if (fc_act > 0) {
            for (int i = 0; i < spec.d_in; ++i) {
                double a = 1.0;
                int pos = i;
                for (int l = 0; l < spec.d_cv && a > 0; ++l) {
                    const int k = digits[static_cast<size_t>(2 * l)];
                    const int c = digits[static_cast<size_t>(2 * l + 1)];
                    pos = (pos - k + spec.d_in) % spec.d_in;
                    a *= gates.gates[static_cast<size_t>(l)].at2(pos, c);
                }
                acc += x[i] * a;
            }
        }
        phi[static_cast<int>(idx++)] = acc;
    });
    return phi;
}

Tensor npv_conv(const Weights& weights, int logit) {
    const ArchSpec& spec = weights.spec;
    const std::uint64_t nb = count_bundles(spec);
    Tensor v({static_cast<int>(nb)});
    const double pool_mask = 1.0 / spec.d_in;
    std::uint64_t idx = 0;
    for_each_bundle(spec, [&](const std::vector<int>& digits) {
        double prod = pool_mask;
        int prev_channel = 0;
        for (int l = 0; l < spec.d_cv; ++l) {
            const int k = digits[static_cast<size_t>(2 * l)];
            const int c = digits[static_cast<size_t>(2 * l + 1)];
            prod *= weights.layers[static_cast<size_t>(l)].at3(k, prev_channel, c);
            prev_channel = c;
        }
        int prev = prev_channel;  // GAP keeps the channel index
        for (int m = 0; m < spec.d_fc; ++m) {
            const int node = m == spec.d_fc - 1
                                 ? logit
                                 : digits[static_cast<size_t>(2 * spec.d_cv + m)];
            prod *= weights.layers[static_cast<size_t>(spec.d_cv + m)].at2(node, prev);
            prev = node;
        }
        v[static_cast<int>(idx++)] = prod;
    });
    return v;
}

}  // namespace

Tensor npf(const Tensor& x, const GateStack& gates, const ArchSpec& spec, std::uint64_t cap) {
    require_hard(gates, "npf");
    require_avg_pooling(spec, "npf");
    check_cap(spec, cap, "npf");
    if (x.size() != spec.d_in) throw std::invalid_argument("npf: input size mismatch");
    if (spec.kind == ArchKind::CONV_GAP) return npf_conv(x, gates, spec);

    Tensor phi({static_cast<int>(count_paths(spec))});
    std::uint64_t idx = 0;
    enumerate_paths(spec, [&](const PathIndexMap& p) {
        phi[static_cast<int>(idx++)] = x[p.input_node] * path_activity(gates, p, spec);
    }, cap);
    return phi;
}

Tensor npv(const Weights& weights, int logit, std::uint64_t cap) {
    const ArchSpec& spec = weights.spec;
    require_avg_pooling(spec, "npv");
    check_cap(spec, cap, "npv");
    if (logit < 0 || logit >= spec.out_dim) throw std::invalid_argument("npv: logit out of range");
    if (spec.kind == ArchKind::CONV_GAP) return npv_conv(weights, logit);

    Tensor v({static_cast<int>(count_paths(spec))});
    std::uint64_t idx = 0;
    if (spec.kind == ArchKind::FC) {
        enumerate_paths(spec, [&](const PathIndexMap& p) {
            double prod = 1.0;
            int prev = p.input_node;
            for (int l = 0; l < spec.d; ++l) {
                const int node = l == spec.d - 1 ? logit : p.layer_nodes[static_cast<size_t>(l)];
                prod *= weights.layers[static_cast<size_t>(l)].at2(node, prev);
                prev = node;
            }
            v[static_cast<int>(idx++)] = prod;
        }, cap);
    } else {
        enumerate_paths(spec, [&](const PathIndexMap& p) {
            double prod = 1.0;
            int prev = p.input_node;
            size_t t = 0;
            const std::vector<int> blocks = traversed_blocks(spec, p.subset_tag);
            const size_t last_block = blocks.size() - 1;
            for (size_t bi = 0; bi < blocks.size(); ++bi) {
                for (int l = 0; l < spec.d_blk; ++l) {
                    const bool is_output = bi == last_block && l == spec.d_blk - 1;
                    const int node = is_output ? logit : p.layer_nodes[t++];
                    const size_t layer = static_cast<size_t>(blocks[bi] * spec.d_blk + l);
                    prod *= weights.layers[layer].at2(node, prev);
                    prev = node;
                }
            }
            v[static_cast<int>(idx++)] = prod;
        }, cap);
    }
    return v;
}

std::vector<std::uint32_t> path_subset_tags(const ArchSpec& spec, std::uint64_t cap) {
    std::vector<std::uint32_t> tags;
    tags.reserve(static_cast<size_t>(count_paths(spec)));
    enumerate_paths(spec, [&](const PathIndexMap& p) { tags.push_back(p.subset_tag); }, cap);
    return tags;
}

GatingNet make_gating_net(const ArchSpec& spec, Family family, InitScheme scheme, RngStream& rng,
                          GatingMode mode, double beta) {
    GatingNet g;
    g.spec = spec;
    g.kind = ModelKind{family, mode, beta};
    g.theta = init_gating_weights(spec, family, scheme, rng);
    return g;
}

GateStack gates_for(const GatingNet& g, const Tensor& x) { return gates_of(g.theta, x, g.kind); }

double output_via_paths(const Tensor& x, const GatingNet& gating, const Weights& value,
                        int logit, std::uint64_t cap) {
    const GateStack gates = gates_for(gating, x);
    require_hard(gates, "output_via_paths");
    const Tensor phi = npf(x, gates, gating.spec, cap);
    const Tensor v = npv(value, logit, cap);
    return dot(phi, v);
}

OverlapTable overlap(const GateStack& gx, const GateStack& gy, const ArchSpec& spec,
                     std::uint64_t cap) {
    require_hard(gx, "overlap");
    require_hard(gy, "overlap");
    OverlapTable table;
    table.per_node.assign(static_cast<size_t>(spec.d_in), 0);
    enumerate_paths(spec, [&](const PathIndexMap& p) {
        if (path_activity(gx, p, spec) > 0 && path_activity(gy, p, spec) > 0) {
            ++table.total;
            ++table.per_node[static_cast<size_t>(p.input_node)];
        }
    }, cap);
    return table;
}

void dump_path_vectors_csv(const Tensor& phi, const Tensor& v, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("dump_path_vectors_csv: cannot open " + path);
    f << "path,phi,v\n";
    for (int i = 0; i < phi.size(); ++i) {
        f.precision(17);
        f << i << "," << phi[i] << "," << (i < v.size() ? v[i] : 0.0) << "\n";
    }
}

void dump_overlap_csv(const OverlapTable& table, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("dump_overlap_csv: cannot open " + path);
    f << "node,count\n";
    for (size_t i = 0; i < table.per_node.size(); ++i)
        f << i << "," << table.per_node[i] << "\n";
    f << "total," << table.total << "\n";
}

}  // namespace galu
