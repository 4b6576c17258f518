#include "galu/network.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "galu/hash.hpp"

namespace galu {

void ArchSpec::validate() const {
    if (d_in < 1 || w < 1 || out_dim < 1)
        throw std::invalid_argument("arch: d_in, w, out_dim must be positive");
    switch (kind) {
        case ArchKind::FC:
            if (d < 2) throw std::invalid_argument("arch: FC needs d >= 2");
            break;
        case ArchKind::CONV_GAP:
            if (d_cv < 1 || d_fc < 1) throw std::invalid_argument("arch: conv needs d_cv,d_fc >= 1");
            if (w_cv < 1 || w_cv >= d_in)
                throw std::invalid_argument("arch: conv needs 1 <= w_cv < d_in");
            if (pooling == Pooling::MAX && (pool_window < 1 || d_in % pool_window != 0))
                throw std::invalid_argument("arch: max pooling window must divide d_in");
            break;
        case ArchKind::RESNET:
            if (b < 0 || d_blk < 1) throw std::invalid_argument("arch: resnet needs b >= 0, d_blk >= 1");
            if (b > 30) throw std::invalid_argument("arch: resnet subset tags support b <= 30");
            break;
    }
}

std::vector<LayerDesc> layer_plan(const ArchSpec& spec) {
    spec.validate();
    std::vector<LayerDesc> plan;
    switch (spec.kind) {
        case ArchKind::FC:
            for (int l = 0; l < spec.d; ++l) {
                LayerDesc ld;
                ld.in_dim = l == 0 ? spec.d_in : spec.w;
                ld.out_dim = l == spec.d - 1 ? spec.out_dim : spec.w;
                ld.gated = l < spec.d - 1;
                plan.push_back(ld);
            }
            break;
        case ArchKind::CONV_GAP: {
            for (int l = 0; l < spec.d_cv; ++l) {
                LayerDesc ld;
                ld.type = LayerDesc::Type::Conv;
                ld.in_dim = l == 0 ? 1 : spec.w;
                ld.out_dim = spec.w;
                ld.gated = true;
                plan.push_back(ld);
            }
            const int pooled = spec.pooling == Pooling::AVG
                                   ? spec.w
                                   : spec.w * (spec.d_in / spec.pool_window);
            for (int l = 0; l < spec.d_fc; ++l) {
                LayerDesc ld;
                ld.in_dim = l == 0 ? pooled : spec.w;
                ld.out_dim = l == spec.d_fc - 1 ? spec.out_dim : spec.w;
                ld.gated = l < spec.d_fc - 1;
                plan.push_back(ld);
            }
            break;
        }
        case ArchKind::RESNET: {
            const int blocks = spec.b + 2;
            const int total = blocks * spec.d_blk;
            int idx = 0;
            for (int blk = 0; blk < blocks; ++blk)
                for (int l = 0; l < spec.d_blk; ++l, ++idx) {
                    LayerDesc ld;
                    ld.in_dim = idx == 0 ? spec.d_in : spec.w;
                    ld.out_dim = idx == total - 1 ? spec.out_dim : spec.w;
                    ld.gated = idx < total - 1;
                    ld.block = blk;
                    plan.push_back(ld);
                }
            break;
        }
    }
    return plan;
}

std::vector<LayerDesc> gating_plan(const ArchSpec& spec, Family family) {
    if (family == Family::DNN)
        throw std::invalid_argument("gating_plan: DNN has no separate gating network");
    if (family != Family::DLGN_SHALLOW) return layer_plan(spec);

    // one independent map from the raw input per gated layer; conv
    // architectures use shallow convolutional generators throughout (pooled
    // for the dense layers) so the gates keep rotating with the input
    std::vector<LayerDesc> plan;
    for (const LayerDesc& ld : layer_plan(spec)) {
        if (!ld.gated) continue;
        LayerDesc g;
        if (spec.kind == ArchKind::CONV_GAP) {
            g.type = LayerDesc::Type::Conv;
            g.in_dim = 1;
        } else {
            g.in_dim = spec.d_in;
        }
        g.out_dim = ld.out_dim;
        g.gated = true;
        plan.push_back(g);
    }
    return plan;
}

int ArchSpec::gated_layer_count() const {
    int n = 0;
    for (const LayerDesc& ld : layer_plan(*this))
        if (ld.gated) ++n;
    return n;
}

std::vector<int> ArchSpec::gate_shape(int gated_layer) const {
    int n = 0;
    for (const LayerDesc& ld : layer_plan(*this)) {
        if (!ld.gated) continue;
        if (n == gated_layer) {
            if (ld.type == LayerDesc::Type::Conv) return {d_in, ld.out_dim};
            return {ld.out_dim};
        }
        ++n;
    }
    throw std::invalid_argument("gate_shape: gated layer index out of range");
}

std::string ArchSpec::serialize() const {
    std::ostringstream os;
    switch (kind) {
        case ArchKind::FC: os << "kind=FC"; break;
        case ArchKind::CONV_GAP: os << "kind=CONV_GAP"; break;
        case ArchKind::RESNET: os << "kind=RESNET"; break;
    }
    os << " d_in=" << d_in << " w=" << w << " out_dim=" << out_dim;
    if (kind == ArchKind::FC) os << " d=" << d;
    if (kind == ArchKind::CONV_GAP) {
        os << " d_cv=" << d_cv << " w_cv=" << w_cv << " d_fc=" << d_fc;
        os << " pooling=" << (pooling == Pooling::AVG ? "AVG" : "MAX");
        if (pooling == Pooling::MAX) os << " pool_window=" << pool_window;
    }
    if (kind == ArchKind::RESNET) os << " b=" << b << " d_blk=" << d_blk;
    return os.str();
}

ArchSpec ArchSpec::parse(const std::string& text) {
    ArchSpec spec;
    std::istringstream is(text);
    std::string tok;
    while (is >> tok) {
        auto eq = tok.find('=');
        if (eq == std::string::npos)
            throw std::invalid_argument("arch parse: expected key=value, got '" + tok + "'");
        const std::string key = tok.substr(0, eq);
        const std::string val = tok.substr(eq + 1);
        if (key == "kind") {
            if (val == "FC") spec.kind = ArchKind::FC;
            else if (val == "CONV_GAP") spec.kind = ArchKind::CONV_GAP;
            else if (val == "RESNET") spec.kind = ArchKind::RESNET;
            else throw std::invalid_argument("arch parse: unknown kind '" + val + "'");
        } else if (key == "pooling") {
            if (val == "AVG") spec.pooling = Pooling::AVG;
            else if (val == "MAX") spec.pooling = Pooling::MAX;
            else throw std::invalid_argument("arch parse: unknown pooling '" + val + "'");
        } else {
            const int n = std::stoi(val);
            if (key == "d_in") spec.d_in = n;
            else if (key == "w") spec.w = n;
            else if (key == "out_dim") spec.out_dim = n;
            else if (key == "d") spec.d = n;
            else if (key == "d_cv") spec.d_cv = n;
            else if (key == "w_cv") spec.w_cv = n;
            else if (key == "d_fc") spec.d_fc = n;
            else if (key == "b") spec.b = n;
            else if (key == "d_blk") spec.d_blk = n;
            else if (key == "pool_window") spec.pool_window = n;
            else throw std::invalid_argument("arch parse: unknown key '" + key + "'");
        }
    }
    spec.validate();
    return spec;
}

double gate_fn(double q, GatingMode gating, double beta) {
    if (gating == GatingMode::HARD) return q > 0 ? 1.0 : 0.0;
    if (beta <= 0) throw std::invalid_argument("gate_fn: beta must be positive");
    return 1.0 / (1.0 + std::exp(-beta * q));
}

namespace {

std::vector<int> tensor_shape_for(const ArchSpec& spec, const LayerDesc& ld) {
    if (ld.type == LayerDesc::Type::Conv) return {spec.w_cv, ld.in_dim, ld.out_dim};
    return {ld.out_dim, ld.in_dim};
}

Weights init_from_plan(const ArchSpec& spec, std::vector<LayerDesc> plan,
                       InitScheme scheme, RngStream& rng) {
    Weights w;
    w.spec = spec;
    w.plan = std::move(plan);
    for (const LayerDesc& ld : w.plan) {
        Tensor t(tensor_shape_for(spec, ld));
        const int fan_in = ld.type == LayerDesc::Type::Conv ? spec.w_cv * ld.in_dim : ld.in_dim;
        switch (scheme.kind) {
            case InitKind::BERNOULLI_PM_SIGMA:
                for (int i = 0; i < t.size(); ++i) t[i] = rng.pm_sigma(scheme.param);
                w.init_tag = "bernoulli_pm_sigma";
                break;
            case InitKind::GAUSSIAN_FAN_IN: {
                const double sd = scheme.param / std::sqrt(static_cast<double>(fan_in));
                for (int i = 0; i < t.size(); ++i) t[i] = sd * rng.gaussian();
                w.init_tag = "gaussian_fan_in";
                break;
            }
            case InitKind::BERNOULLI_NTK: {
                // conv layers draw at c/sqrt(w*w_cv), dense layers at c/sqrt(w)
                const double sigma =
                    ld.type == LayerDesc::Type::Conv
                        ? scheme.param / std::sqrt(static_cast<double>(spec.w * spec.w_cv))
                        : scheme.param / std::sqrt(static_cast<double>(spec.w));
                for (int i = 0; i < t.size(); ++i) t[i] = rng.pm_sigma(sigma);
                w.init_tag = "bernoulli_ntk";
                break;
            }
        }
        w.layers.push_back(std::move(t));
    }
    return w;
}

}  // namespace

Weights init_weights(const ArchSpec& spec, InitScheme scheme, RngStream& rng) {
    return init_from_plan(spec, layer_plan(spec), scheme, rng);
}

Weights init_gating_weights(const ArchSpec& spec, Family family, InitScheme scheme, RngStream& rng) {
    return init_from_plan(spec, gating_plan(spec, family), scheme, rng);
}

std::uint64_t Weights::content_hash() const {
    Fnv1a h;
    for (const Tensor& t : layers) {
        for (int d : t.shape()) h.i32(d);
        for (int i = 0; i < t.size(); ++i) h.f64(t[i]);
    }
    return h.state;
}

void save_checkpoint(const Weights& w, std::uint64_t seed, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path + " for writing");
    f << "GALUPATH-CKPT 1\n";
    f << "spec " << w.spec.serialize() << "\n";
    f << "seed " << seed << "\n";
    f << "init " << (w.init_tag.empty() ? "none" : w.init_tag) << "\n";
    f << "layers " << w.plan.size() << "\n";
    for (size_t i = 0; i < w.plan.size(); ++i) {
        const LayerDesc& ld = w.plan[i];
        f << "layer " << (ld.type == LayerDesc::Type::Conv ? "conv" : "dense") << " "
          << ld.in_dim << " " << ld.out_dim << " " << (ld.gated ? 1 : 0) << " " << ld.block << "\n";
    }
    f << "data\n";
    for (const Tensor& t : w.layers)
        for (int i = 0; i < t.size(); ++i) {
            const auto bits = std::bit_cast<std::uint64_t>(t[i]);
            char buf[8];
            for (int b = 0; b < 8; ++b) buf[b] = static_cast<char>((bits >> (8 * b)) & 0xFF);
            f.write(buf, 8);
        }
    if (!f) throw std::runtime_error("checkpoint: write failed for " + path);
}

Weights load_checkpoint(const std::string& path, std::uint64_t* seed_out) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("checkpoint: cannot open " + path);
    std::string line;
    std::getline(f, line);
    if (line != "GALUPATH-CKPT 1") throw std::runtime_error("checkpoint: bad magic in " + path);

    Weights w;
    size_t n_layers = 0;
    while (std::getline(f, line) && line != "data") {
        std::istringstream is(line);
        std::string key;
        is >> key;
        if (key == "spec") {
            std::string rest;
            std::getline(is, rest);
            w.spec = ArchSpec::parse(rest);
        } else if (key == "seed") {
            std::uint64_t s;
            is >> s;
            if (seed_out) *seed_out = s;
        } else if (key == "init") {
            is >> w.init_tag;
        } else if (key == "layers") {
            is >> n_layers;
        } else if (key == "layer") {
            LayerDesc ld;
            std::string type;
            int gated;
            is >> type >> ld.in_dim >> ld.out_dim >> gated >> ld.block;
            ld.type = type == "conv" ? LayerDesc::Type::Conv : LayerDesc::Type::Dense;
            ld.gated = gated != 0;
            w.plan.push_back(ld);
        } else {
            throw std::runtime_error("checkpoint: unknown header key '" + key + "'");
        }
    }
    if (w.plan.size() != n_layers)
        throw std::runtime_error("checkpoint: layer count mismatch");
    for (const LayerDesc& ld : w.plan) {
        Tensor t(tensor_shape_for(w.spec, ld));
        for (int i = 0; i < t.size(); ++i) {
            char buf[8];
            f.read(buf, 8);
            if (!f) throw std::runtime_error("checkpoint: truncated tensor data");
            std::uint64_t bits = 0;
            for (int b = 0; b < 8; ++b)
                bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(buf[b])) << (8 * b);
            t[i] = std::bit_cast<double>(bits);
        }
        w.layers.push_back(std::move(t));
    }
    return w;
}

namespace {

enum class WalkMode { SelfRelu, LinearChain, External };

struct WalkResult {
    Tensor output;
    std::vector<Tensor> preacts;  // per gated layer, conv preacts are [w, d_in]
};

Tensor apply_gate_to_preact(const Tensor& q, const Tensor& gate, bool conv) {
    Tensor z = q;
    if (conv) {
        // gate is stored position-major [d_in, w]; preact is [w, d_in]
        const int c = q.dim(0), d = q.dim(1);
        if (gate.ndim() != 2 || gate.dim(0) != d || gate.dim(1) != c)
            throw std::invalid_argument("gate shape does not match conv preactivation");
        for (int ch = 0; ch < c; ++ch)
            for (int p = 0; p < d; ++p) z.at2(ch, p) = q.at2(ch, p) * gate.at2(p, ch);
    } else {
        if (gate.size() != q.size())
            throw std::invalid_argument("gate shape does not match preactivation");
        for (int i = 0; i < z.size(); ++i) z[i] = q[i] * gate[i];
    }
    return z;
}

Tensor self_relu(const Tensor& q) {
    Tensor z = q;
    for (int i = 0; i < z.size(); ++i) z[i] = q[i] > 0 ? q[i] : 0.0;
    return z;
}

Tensor gated_output(const Tensor& q, WalkMode mode, const GateStack* ext, int gate_idx, bool conv) {
    switch (mode) {
        case WalkMode::SelfRelu: return self_relu(q);
        case WalkMode::LinearChain: return q;
        case WalkMode::External:
            return apply_gate_to_preact(q, ext->gates[static_cast<size_t>(gate_idx)], conv);
    }
    return q;
}

Tensor pool_and_flatten(const ArchSpec& spec, const Tensor& z) {
    if (spec.pooling == Pooling::AVG) return global_average_pool(z);
    Tensor p = max_pool_1d(z, spec.pool_window);
    return Tensor({p.size()}, std::vector<double>(p.data(), p.data() + p.size()));
}

// One pass through an architecture-shaped net; preacts of gated layers are
// collected so callers can derive gates from them.
WalkResult walk(const Weights& w, const Tensor& x, WalkMode mode, const GateStack* ext) {
    const ArchSpec& spec = w.spec;
    WalkResult res;
    int gate_idx = 0;

    if (mode == WalkMode::External) {
        if (!ext) throw std::invalid_argument("walk: external mode needs gates");
        if (static_cast<int>(ext->gates.size()) != spec.gated_layer_count())
            throw std::invalid_argument("walk: gate stack size does not match architecture");
    }

    auto dense_step = [&](const Tensor& z, size_t layer) {
        const Tensor& W = w.layers[layer];
        Tensor q = matvec(W, z);
        if (!w.plan[layer].gated) return q;
        res.preacts.push_back(q);
        return gated_output(q, mode, ext, gate_idx++, false);
    };

    switch (spec.kind) {
        case ArchKind::FC: {
            if (x.size() != spec.d_in) throw std::invalid_argument("forward: input size mismatch");
            Tensor z = x;
            for (size_t l = 0; l < w.plan.size(); ++l) z = dense_step(z, l);
            res.output = z;
            break;
        }
        case ArchKind::CONV_GAP: {
            if (x.size() != spec.d_in) throw std::invalid_argument("forward: input size mismatch");
            Tensor z({1, spec.d_in}, std::vector<double>(x.data(), x.data() + x.size()));
            size_t l = 0;
            for (; l < w.plan.size() && w.plan[l].type == LayerDesc::Type::Conv; ++l) {
                Tensor q = conv1d_circular(z, w.layers[l]);
                res.preacts.push_back(q);
                z = gated_output(q, mode, ext, gate_idx++, true);
            }
            Tensor v = pool_and_flatten(spec, z);
            for (; l < w.plan.size(); ++l) v = dense_step(v, l);
            res.output = v;
            break;
        }
        case ArchKind::RESNET: {
            if (x.size() != spec.d_in) throw std::invalid_argument("forward: input size mismatch");
            auto block_pass = [&](const Tensor& in, int blk) {
                Tensor z = in;
                for (size_t l = 0; l < w.plan.size(); ++l)
                    if (w.plan[l].block == blk) z = dense_step(z, l);
                return z;
            };
            Tensor u = block_pass(x, 0);
            for (int blk = 1; blk <= spec.b; ++blk) u = add(u, block_pass(u, blk));
            res.output = block_pass(u, spec.b + 1);
            break;
        }
    }
    return res;
}

// preactivations of each gated layer from its independent shallow map; for
// conv architectures the maps feeding dense layers are pooled conv maps
std::vector<Tensor> shallow_gate_preacts(const Weights& theta_f, const Tensor& x) {
    const ArchSpec& spec = theta_f.spec;
    std::vector<Tensor> preacts;
    size_t g = 0;
    for (const LayerDesc& arch_ld : layer_plan(spec)) {
        if (!arch_ld.gated) continue;
        const LayerDesc& map = theta_f.plan[g];
        if (map.type == LayerDesc::Type::Conv) {
            Tensor z({1, spec.d_in}, std::vector<double>(x.data(), x.data() + x.size()));
            Tensor q = conv1d_circular(z, theta_f.layers[g]);
            if (arch_ld.type == LayerDesc::Type::Dense) q = global_average_pool(q);
            preacts.push_back(std::move(q));
        } else {
            preacts.push_back(matvec(theta_f.layers[g], x));
        }
        ++g;
    }
    return preacts;
}

GateStack gates_from_preacts(const std::vector<LayerDesc>& plan,
                             const std::vector<Tensor>& preacts, GatingMode mode, double beta) {
    GateStack gs;
    gs.hard = mode == GatingMode::HARD;
    int gate_idx = 0;
    for (const LayerDesc& ld : plan) {
        if (!ld.gated) continue;
        const Tensor& q = preacts[static_cast<size_t>(gate_idx)];
        if (ld.type == LayerDesc::Type::Conv) {
            const int c = q.dim(0), d = q.dim(1);
            Tensor g({d, c});
            for (int p = 0; p < d; ++p)
                for (int ch = 0; ch < c; ++ch) g.at2(p, ch) = gate_fn(q.at2(ch, p), mode, beta);
            gs.gates.push_back(std::move(g));
        } else {
            Tensor g({q.size()});
            for (int i = 0; i < q.size(); ++i) g[i] = gate_fn(q[i], mode, beta);
            gs.gates.push_back(std::move(g));
        }
        ++gate_idx;
    }
    return gs;
}

}  // namespace

ForwardResult forward_dnn(const Weights& w, const Tensor& x) {
    WalkResult wr = walk(w, x, WalkMode::SelfRelu, nullptr);
    ForwardResult fr;
    fr.output = std::move(wr.output);
    fr.gates = gates_from_preacts(w.plan, wr.preacts, GatingMode::HARD, 0);
    fr.preacts = std::move(wr.preacts);
    return fr;
}

ForwardResult forward_conv_gap(const Weights& w, const Tensor& x, const GateStack* external) {
    if (w.spec.kind != ArchKind::CONV_GAP)
        throw std::invalid_argument("forward_conv_gap: spec kind is not CONV_GAP");
    if (!external) return forward_dnn(w, x);
    WalkResult wr = walk(w, x, WalkMode::External, external);
    return {std::move(wr.output), *external, std::move(wr.preacts)};
}

ForwardResult forward_resnet(const Weights& w, const Tensor& x, const GateStack* external) {
    if (w.spec.kind != ArchKind::RESNET)
        throw std::invalid_argument("forward_resnet: spec kind is not RESNET");
    if (!external) return forward_dnn(w, x);
    WalkResult wr = walk(w, x, WalkMode::External, external);
    return {std::move(wr.output), *external, std::move(wr.preacts)};
}

GateStack gates_of(const Weights& theta_f, const Tensor& x, const ModelKind& kind) {
    if (kind.family == Family::DNN)
        throw std::invalid_argument("gates_of: DNN gates come from forward_dnn");

    std::vector<Tensor> preacts;
    if (kind.family == Family::DLGN_SHALLOW) {
        preacts = shallow_gate_preacts(theta_f, x);
    } else {
        const WalkMode m = kind.family == Family::DGN ? WalkMode::SelfRelu : WalkMode::LinearChain;
        preacts = walk(theta_f, x, m, nullptr).preacts;
    }
    // shallow gating preactivations line up with the architecture's gated
    // layers, not with the shallow maps' own plan
    const std::vector<LayerDesc> plan = kind.family == Family::DLGN_SHALLOW
                                            ? layer_plan(theta_f.spec)
                                            : theta_f.plan;
    return gates_from_preacts(plan, preacts, kind.gating, kind.beta);
}

Tensor forward_gated(const Weights& theta_v, const Tensor& x_w, const GateStack& gates) {
    return walk(theta_v, x_w, WalkMode::External, &gates).output;
}

GateStack apply_permutation(const GateStack& gates, const std::vector<int>& perm) {
    if (perm.size() != gates.gates.size())
        throw std::invalid_argument("apply_permutation: permutation length mismatch");
    std::vector<bool> seen(perm.size(), false);
    for (int p : perm) {
        if (p < 0 || p >= static_cast<int>(perm.size()) || seen[static_cast<size_t>(p)])
            throw std::invalid_argument("apply_permutation: not a permutation");
        seen[static_cast<size_t>(p)] = true;
    }
    GateStack out;
    out.hard = gates.hard;
    for (size_t l = 0; l < perm.size(); ++l) {
        const Tensor& src = gates.gates[static_cast<size_t>(perm[l])];
        if (!src.same_shape(gates.gates[l]))
            throw std::invalid_argument(
                "apply_permutation: layers " + std::to_string(l) + " and " +
                std::to_string(perm[l]) + " have different gate shapes");
        out.gates.push_back(src);
    }
    return out;
}

Weights drop_block(const Weights& w, int j) {
    if (w.spec.kind != ArchKind::RESNET)
        throw std::invalid_argument("drop_block: spec kind is not RESNET");
    if (j < 1 || j > w.spec.b)
        throw std::invalid_argument("drop_block: block " + std::to_string(j) +
                                    " is not a skippable block (valid: 1.." +
                                    std::to_string(w.spec.b) + ")");
    Weights out = w;
    for (size_t l = 0; l < out.plan.size(); ++l)
        if (out.plan[l].block == j)
            out.layers[l] = Tensor::zeros(out.layers[l].shape());
    return out;
}

Tensor Model::value_net_input(const Tensor& x) const {
    switch (value_input) {
        case ValueInput::SAME: return x;
        case ValueInput::ONES: return Tensor::ones({spec.d_in});
        case ValueInput::ZEROS: return Tensor::zeros({spec.d_in});
    }
    return x;
}

Model make_model(const ArchSpec& spec, ModelKind kind, InitScheme scheme, RngStream& rng) {
    Model m;
    m.spec = spec;
    m.kind = kind;
    m.value = init_weights(spec, scheme, rng);
    if (kind.family != Family::DNN)
        m.gating = init_gating_weights(spec, kind.family, scheme, rng);
    return m;
}

Tensor model_forward(const Model& m, const Tensor& x) {
    if (m.kind.family == Family::DNN) return forward_dnn(m.value, x).output;
    GateStack gates = gates_of(*m.gating, x, m.kind);
    if (!m.gate_perm.empty()) gates = apply_permutation(gates, m.gate_perm);
    return forward_gated(m.value, m.value_net_input(x), gates);
}

double min_hard_gate_preact(const Model& m, const Tensor& x) {
    std::vector<Tensor> preacts;
    if (m.kind.family == Family::DNN) {
        preacts = walk(m.value, x, WalkMode::SelfRelu, nullptr).preacts;
    } else if (m.kind.gating == GatingMode::SOFT) {
        return std::numeric_limits<double>::infinity();
    } else if (m.kind.family == Family::DLGN_SHALLOW) {
        preacts = shallow_gate_preacts(*m.gating, x);
    } else {
        const WalkMode wm =
            m.kind.family == Family::DGN ? WalkMode::SelfRelu : WalkMode::LinearChain;
        preacts = walk(*m.gating, x, wm, nullptr).preacts;
    }
    double mn = std::numeric_limits<double>::infinity();
    for (const Tensor& q : preacts)
        for (int i = 0; i < q.size(); ++i) mn = std::min(mn, std::abs(q[i]));
    return mn;
}

namespace {

// Conv gate tensors are stored [d_in, w]; tape preactivations are [w, d_in].
Tensor conv_gate_mask(const Tensor& gate) {
    const int d = gate.dim(0), c = gate.dim(1);
    Tensor m({c, d});
    for (int ch = 0; ch < c; ++ch)
        for (int p = 0; p < d; ++p) m.at2(ch, p) = gate.at2(p, ch);
    return m;
}

struct TapeWalk {
    TapeModel& tm;
    const Weights& w;
    const std::vector<int>& param_ids;
    // external hard gates (frozen gating) or in-tape soft gate node ids
    const GateStack* hard_gates = nullptr;
    const std::vector<int>* soft_gate_nodes = nullptr;
    const std::vector<int>* perm = nullptr;

    int gate_for(int idx) const {
        return perm && !perm->empty() ? (*perm)[static_cast<size_t>(idx)] : idx;
    }

    int run(int x_node_vec, int x_node_conv) {
        const ArchSpec& spec = w.spec;
        int gate_idx = 0;

        auto gate_step = [&](int q, bool conv) {
            const int src = gate_for(gate_idx++);
            if (soft_gate_nodes) return tm.tape.mul(q, (*soft_gate_nodes)[static_cast<size_t>(src)]);
            const Tensor& g = hard_gates->gates[static_cast<size_t>(src)];
            return tm.tape.hard_gate(q, conv ? conv_gate_mask(g) : g);
        };
        auto dense_step = [&](int z, size_t layer) {
            int q = tm.tape.matvec(param_ids[layer], z);
            if (!w.plan[layer].gated) return q;
            return gate_step(q, false);
        };

        switch (spec.kind) {
            case ArchKind::FC: {
                int z = x_node_vec;
                for (size_t l = 0; l < w.plan.size(); ++l) z = dense_step(z, l);
                return z;
            }
            case ArchKind::CONV_GAP: {
                int z = x_node_conv;
                size_t l = 0;
                for (; l < w.plan.size() && w.plan[l].type == LayerDesc::Type::Conv; ++l) {
                    int q = tm.tape.conv1d(param_ids[l], z);
                    z = gate_step(q, true);
                }
                int v;
                if (spec.pooling == Pooling::AVG) {
                    v = tm.tape.gap(z);
                } else {
                    int p = tm.tape.max_pool(z, spec.pool_window);
                    v = tm.tape.reshape(p, {tm.tape.value(p).size()});
                }
                for (; l < w.plan.size(); ++l) v = dense_step(v, l);
                return v;
            }
            case ArchKind::RESNET: {
                auto block_pass = [&](int in, int blk) {
                    int z = in;
                    for (size_t l = 0; l < w.plan.size(); ++l)
                        if (w.plan[l].block == blk) z = dense_step(z, l);
                    return z;
                };
                int u = block_pass(x_node_vec, 0);
                for (int blk = 1; blk <= spec.b; ++blk) u = tm.tape.add(u, block_pass(u, blk));
                return block_pass(u, spec.b + 1);
            }
        }
        throw std::logic_error("unreachable");
    }
};

}  // namespace

TapeModel begin_tape(const Model& m, TapeParams which) {
    TapeModel tm;
    for (const Tensor& t : m.value.layers) tm.value_param_ids.push_back(tm.tape.param(t));
    if (which == TapeParams::VALUE_AND_GATING && m.kind.family != Family::DNN)
        for (const Tensor& t : m.gating->layers) tm.gating_param_ids.push_back(tm.tape.param(t));
    return tm;
}

int tape_logits(TapeModel& tm, const Model& m, const Tensor& x) {
    Tape& tape = tm.tape;
    const Tensor x_w = m.kind.family == Family::DNN ? x : m.value_net_input(x);
    const int xw_vec = tape.input(x_w);
    const int xw_conv = m.spec.kind == ArchKind::CONV_GAP
                            ? tape.input(Tensor({1, m.spec.d_in},
                                                std::vector<double>(x_w.data(), x_w.data() + x_w.size())))
                            : -1;

    if (m.kind.family == Family::DNN) {
        // plain ReLU net: self gating in-tape
        const Weights& w = m.value;
        struct SelfWalk {
            Tape& tape;
            const Weights& w;
            const std::vector<int>& params;
            int dense(int z, size_t l) {
                int q = tape.matvec(params[l], z);
                return w.plan[l].gated ? tape.relu(q) : q;
            }
            int run(int xv, int xc) {
                switch (w.spec.kind) {
                    case ArchKind::FC: {
                        int z = xv;
                        for (size_t l = 0; l < w.plan.size(); ++l) z = dense(z, l);
                        return z;
                    }
                    case ArchKind::CONV_GAP: {
                        int z = xc;
                        size_t l = 0;
                        for (; l < w.plan.size() && w.plan[l].type == LayerDesc::Type::Conv; ++l)
                            z = tape.relu(tape.conv1d(params[l], z));
                        int v;
                        if (w.spec.pooling == Pooling::AVG) {
                            v = tape.gap(z);
                        } else {
                            int p = tape.max_pool(z, w.spec.pool_window);
                            v = tape.reshape(p, {tape.value(p).size()});
                        }
                        for (; l < w.plan.size(); ++l) v = dense(v, l);
                        return v;
                    }
                    case ArchKind::RESNET: {
                        auto block_pass = [&](int in, int blk) {
                            int z = in;
                            for (size_t l = 0; l < w.plan.size(); ++l)
                                if (w.plan[l].block == blk) z = dense(z, l);
                            return z;
                        };
                        int u = block_pass(xv, 0);
                        for (int blk = 1; blk <= w.spec.b; ++blk)
                            u = tape.add(u, block_pass(u, blk));
                        return block_pass(u, w.spec.b + 1);
                    }
                }
                throw std::logic_error("unreachable");
            }
        };
        return SelfWalk{tape, w, tm.value_param_ids}.run(xw_vec, xw_conv);
    }

    if (!tm.gating_param_ids.empty() && m.kind.gating == GatingMode::SOFT) {
        // soft standalone mode: gating net lives on the tape too
        const Weights& gw = *m.gating;
        std::vector<int> gate_nodes;
        const int xg_vec = tape.input(x);
        const int xg_conv = m.spec.kind == ArchKind::CONV_GAP
                                ? tape.input(Tensor({1, m.spec.d_in},
                                                    std::vector<double>(x.data(), x.data() + x.size())))
                                : -1;

        if (m.kind.family == Family::DLGN_SHALLOW) {
            size_t g = 0;
            for (const LayerDesc& arch_ld : layer_plan(m.spec)) {
                if (!arch_ld.gated) continue;
                int q;
                if (gw.plan[g].type == LayerDesc::Type::Conv) {
                    q = tape.conv1d(tm.gating_param_ids[g], xg_conv);
                    if (arch_ld.type == LayerDesc::Type::Dense) q = tape.gap(q);
                } else {
                    q = tape.matvec(tm.gating_param_ids[g], xg_vec);
                }
                gate_nodes.push_back(tape.sigmoid_gate(q, m.kind.beta));
                ++g;
            }
        } else {
            const bool relu_inside = m.kind.family == Family::DGN;
            struct GatingWalk {
                Tape& tape;
                const Weights& w;
                const std::vector<int>& params;
                bool relu_inside;
                double beta;
                std::vector<int>& gate_nodes;
                int dense(int z, size_t l) {
                    int q = tape.matvec(params[l], z);
                    if (!w.plan[l].gated) return q;
                    gate_nodes.push_back(tape.sigmoid_gate(q, beta));
                    return relu_inside ? tape.relu(q) : tape.identity(q);
                }
                void run(int xv, int xc) {
                    switch (w.spec.kind) {
                        case ArchKind::FC: {
                            int z = xv;
                            for (size_t l = 0; l < w.plan.size(); ++l) z = dense(z, l);
                            break;
                        }
                        case ArchKind::CONV_GAP: {
                            int z = xc;
                            size_t l = 0;
                            for (; l < w.plan.size() && w.plan[l].type == LayerDesc::Type::Conv; ++l) {
                                int q = tape.conv1d(params[l], z);
                                gate_nodes.push_back(tape.sigmoid_gate(q, beta));
                                z = relu_inside ? tape.relu(q) : tape.identity(q);
                            }
                            int v;
                            if (w.spec.pooling == Pooling::AVG) {
                                v = tape.gap(z);
                            } else {
                                int p = tape.max_pool(z, w.spec.pool_window);
                                v = tape.reshape(p, {tape.value(p).size()});
                            }
                            for (; l < w.plan.size(); ++l) v = dense(v, l);
                            break;
                        }
                        case ArchKind::RESNET: {
                            auto block_pass = [&](int in, int blk) {
                                int z = in;
                                for (size_t l = 0; l < w.plan.size(); ++l)
                                    if (w.plan[l].block == blk) z = dense(z, l);
                                return z;
                            };
                            int u = block_pass(xv, 0);
                            for (int blk = 1; blk <= w.spec.b; ++blk)
                                u = tape.add(u, block_pass(u, blk));
                            block_pass(u, w.spec.b + 1);
                            break;
                        }
                    }
                }
            };
            GatingWalk{tape, gw, tm.gating_param_ids, relu_inside, m.kind.beta, gate_nodes}
                .run(xg_vec, xg_conv);
        }
        TapeWalk tw{tm, m.value, tm.value_param_ids, nullptr, &gate_nodes,
                    m.gate_perm.empty() ? nullptr : &m.gate_perm};
        return tw.run(xw_vec, xw_conv);
    }

    // frozen gating: gate values (hard bits or frozen soft activations)
    // enter the tape as constant masks
    GateStack gates = gates_of(*m.gating, x, m.kind);
    if (!m.gate_perm.empty()) gates = apply_permutation(gates, m.gate_perm);
    TapeWalk tw{tm, m.value, tm.value_param_ids, &gates, nullptr, nullptr};
    return tw.run(xw_vec, xw_conv);
}

}  // namespace galu
