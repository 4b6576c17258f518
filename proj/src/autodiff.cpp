#include "galu/autodiff.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace galu {

int Tape::push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<int>(nodes_.size()) - 1;
}

int Tape::input(Tensor value) { return push({Op::Input, -1, -1, std::move(value), {}, 0, 0}); }

int Tape::param(Tensor value) {
    int id = push({Op::Param, -1, -1, std::move(value), {}, 0, 0});
    params_.push_back(id);
    return id;
}

int Tape::matvec(int w, int z) {
    Tensor v = galu::matvec(nodes_[w].value, nodes_[z].value);
    return push({Op::MatVec, w, z, std::move(v), {}, 0, 0});
}

int Tape::conv1d(int kernel, int z) {
    Tensor v = conv1d_circular(nodes_[z].value, nodes_[kernel].value);
    return push({Op::Conv1d, kernel, z, std::move(v), {}, 0, 0});
}

int Tape::gap(int z) {
    Tensor v = global_average_pool(nodes_[z].value);
    return push({Op::Gap, z, -1, std::move(v), {}, 0, 0});
}

int Tape::max_pool(int z, int window) {
    Tensor v = max_pool_1d(nodes_[z].value, window);
    return push({Op::MaxPool, z, -1, std::move(v), {}, 0, window});
}

int Tape::relu(int q) {
    Tensor v = nodes_[q].value;
    for (int i = 0; i < v.size(); ++i) v[i] = v[i] > 0 ? v[i] : 0.0;
    return push({Op::Relu, q, -1, std::move(v), {}, 0, 0});
}

int Tape::identity(int q) { return push({Op::Identity, q, -1, nodes_[q].value, {}, 0, 0}); }

int Tape::hard_gate(int q, const Tensor& gates) {
    const Tensor& qv = nodes_[q].value;
    if (qv.size() != gates.size()) throw std::invalid_argument("hard_gate: gate shape mismatch");
    Tensor v = qv;
    for (int i = 0; i < v.size(); ++i) v[i] *= gates[i];
    return push({Op::HardGate, q, -1, std::move(v), gates, 0, 0});
}

int Tape::sigmoid_gate(int q, double beta) {
    Tensor v = nodes_[q].value;
    for (int i = 0; i < v.size(); ++i) v[i] = 1.0 / (1.0 + std::exp(-beta * v[i]));
    return push({Op::SigmoidGate, q, -1, std::move(v), {}, beta, 0});
}

int Tape::mul(int a, int b) {
    Tensor v = hadamard(nodes_[a].value, nodes_[b].value);
    return push({Op::Mul, a, b, std::move(v), {}, 0, 0});
}

int Tape::add(int a, int b) {
    Tensor v = galu::add(nodes_[a].value, nodes_[b].value);
    return push({Op::Add, a, b, std::move(v), {}, 0, 0});
}

int Tape::scale(int a, double c) {
    Tensor v = galu::scale(nodes_[a].value, c);
    return push({Op::Scale, a, -1, std::move(v), {}, c, 0});
}

int Tape::reshape(int a, std::vector<int> shape) {
    const Tensor& av = nodes_[a].value;
    Tensor v(std::move(shape), std::vector<double>(av.data(), av.data() + av.size()));
    return push({Op::Reshape, a, -1, std::move(v), {}, 0, 0});
}

int Tape::select(int z, int index) {
    const Tensor& zv = nodes_[z].value;
    if (index < 0 || index >= zv.size()) throw std::invalid_argument("select: index out of range");
    return push({Op::Select, z, -1, Tensor::scalar(zv[index]), {}, 0, index});
}

int Tape::softmax_ce(int logits, int label) {
    const Tensor& lv = nodes_[logits].value;
    if (label < 0 || label >= lv.size()) throw std::invalid_argument("softmax_ce: label out of range");
    double mx = lv[0];
    for (int i = 1; i < lv.size(); ++i) mx = std::max(mx, lv[i]);
    double lse = 0.0;
    for (int i = 0; i < lv.size(); ++i) lse += std::exp(lv[i] - mx);
    lse = mx + std::log(lse);
    return push({Op::SoftmaxCe, logits, -1, Tensor::scalar(lse - lv[label]), {}, 0, label});
}

int Tape::mse(int pred, const Tensor& target) {
    const Tensor& pv = nodes_[pred].value;
    if (pv.size() != target.size()) throw std::invalid_argument("mse: target shape mismatch");
    double acc = 0.0;
    for (int i = 0; i < pv.size(); ++i) {
        double d = pv[i] - target[i];
        acc += d * d;
    }
    return push({Op::Mse, pred, -1, Tensor::scalar(acc / pv.size()), target, 0, 0});
}

const Tensor& Tape::value(int id) const { return nodes_[static_cast<size_t>(id)].value; }

std::map<int, Tensor> Tape::backward(int output) const {
    const Node& out = nodes_[static_cast<size_t>(output)];
    if (out.value.size() != 1)
        throw std::logic_error("backward: output node must be scalar");

    std::vector<Tensor> grad(nodes_.size());
    std::vector<bool> live(nodes_.size(), false);
    grad[output] = Tensor::scalar(1.0);
    live[output] = true;

    auto touch = [&](int id, const Tensor& shape_like) {
        if (!live[id]) {
            grad[id] = Tensor::zeros(shape_like.shape());
            live[id] = true;
        }
    };

    for (int id = output; id >= 0; --id) {
        if (!live[id]) continue;
        const Node& n = nodes_[static_cast<size_t>(id)];
        const Tensor& g = grad[id];
        switch (n.op) {
            case Op::Input:
            case Op::Param:
                break;
            case Op::MatVec: {
                const Tensor& w = nodes_[n.a].value;
                const Tensor& z = nodes_[n.b].value;
                touch(n.a, w);
                touch(n.b, z);
                Tensor& gw = grad[n.a];
                Tensor& gz = grad[n.b];
                const int m = w.dim(0), k = w.dim(1);
                for (int i = 0; i < m; ++i)
                    for (int j = 0; j < k; ++j) {
                        gw.at2(i, j) += g[i] * z[j];
                        gz[j] += w.at2(i, j) * g[i];
                    }
                break;
            }
            case Op::Conv1d: {
                const Tensor& kern = nodes_[n.a].value;
                const Tensor& z = nodes_[n.b].value;
                touch(n.a, kern);
                touch(n.b, z);
                Tensor& gk = grad[n.a];
                Tensor& gz = grad[n.b];
                const int w_cv = kern.dim(0), c_in = kern.dim(1), c_out = kern.dim(2);
                const int d = z.dim(1);
                for (int co = 0; co < c_out; ++co)
                    for (int p = 0; p < d; ++p) {
                        const double go = g.at2(co, p);
                        if (go == 0.0) continue;
                        for (int k = 0; k < w_cv; ++k) {
                            const int src = (p + k) % d;
                            for (int ci = 0; ci < c_in; ++ci) {
                                gk.at3(k, ci, co) += go * z.at2(ci, src);
                                gz.at2(ci, src) += kern.at3(k, ci, co) * go;
                            }
                        }
                    }
                break;
            }
            case Op::Gap: {
                const Tensor& z = nodes_[n.a].value;
                touch(n.a, z);
                Tensor& gz = grad[n.a];
                const int c = z.dim(0), d = z.dim(1);
                for (int ch = 0; ch < c; ++ch)
                    for (int p = 0; p < d; ++p) gz.at2(ch, p) += g[ch] / d;
                break;
            }
            case Op::MaxPool: {
                const Tensor& z = nodes_[n.a].value;
                touch(n.a, z);
                Tensor& gz = grad[n.a];
                const int c = z.dim(0), d = z.dim(1), win = n.index;
                for (int ch = 0; ch < c; ++ch)
                    for (int j = 0; j < d / win; ++j) {
                        int best = j * win;
                        for (int k = 1; k < win; ++k)
                            if (z.at2(ch, j * win + k) > z.at2(ch, best)) best = j * win + k;
                        gz.at2(ch, best) += g.at2(ch, j);
                    }
                break;
            }
            case Op::Relu: {
                const Tensor& q = nodes_[n.a].value;
                touch(n.a, q);
                Tensor& gq = grad[n.a];
                for (int i = 0; i < q.size(); ++i)
                    if (q[i] > 0) gq[i] += g[i];
                break;
            }
            case Op::Identity: {
                touch(n.a, nodes_[n.a].value);
                Tensor& gq = grad[n.a];
                for (int i = 0; i < gq.size(); ++i) gq[i] += g[i];
                break;
            }
            case Op::HardGate: {
                touch(n.a, nodes_[n.a].value);
                Tensor& gq = grad[n.a];
                for (int i = 0; i < gq.size(); ++i) gq[i] += g[i] * n.aux[i];
                break;
            }
            case Op::SigmoidGate: {
                touch(n.a, nodes_[n.a].value);
                Tensor& gq = grad[n.a];
                for (int i = 0; i < gq.size(); ++i) {
                    const double s = n.value[i];
                    gq[i] += g[i] * n.scalar * s * (1.0 - s);
                }
                break;
            }
            case Op::Mul: {
                const Tensor& a = nodes_[n.a].value;
                const Tensor& b = nodes_[n.b].value;
                touch(n.a, a);
                touch(n.b, b);
                Tensor& ga = grad[n.a];
                Tensor& gb = grad[n.b];
                for (int i = 0; i < a.size(); ++i) {
                    ga[i] += g[i] * b[i];
                    gb[i] += g[i] * a[i];
                }
                break;
            }
            case Op::Add: {
                touch(n.a, nodes_[n.a].value);
                touch(n.b, nodes_[n.b].value);
                Tensor& ga = grad[n.a];
                Tensor& gb = grad[n.b];
                for (int i = 0; i < ga.size(); ++i) {
                    ga[i] += g[i];
                    gb[i] += g[i];
                }
                break;
            }
            case Op::Scale: {
                touch(n.a, nodes_[n.a].value);
                Tensor& ga = grad[n.a];
                for (int i = 0; i < ga.size(); ++i) ga[i] += n.scalar * g[i];
                break;
            }
            case Op::Reshape: {
                touch(n.a, nodes_[n.a].value);
                Tensor& ga = grad[n.a];
                for (int i = 0; i < ga.size(); ++i) ga[i] += g[i];
                break;
            }
            case Op::Select: {
                touch(n.a, nodes_[n.a].value);
                grad[n.a][n.index] += g[0];
                break;
            }
            case Op::SoftmaxCe: {
                const Tensor& logits = nodes_[n.a].value;
                touch(n.a, logits);
                Tensor& gl = grad[n.a];
                double mx = logits[0];
                for (int i = 1; i < logits.size(); ++i) mx = std::max(mx, logits[i]);
                double denom = 0.0;
                for (int i = 0; i < logits.size(); ++i) denom += std::exp(logits[i] - mx);
                for (int i = 0; i < logits.size(); ++i) {
                    double p = std::exp(logits[i] - mx) / denom;
                    gl[i] += g[0] * (p - (i == n.index ? 1.0 : 0.0));
                }
                break;
            }
            case Op::Mse: {
                const Tensor& pred = nodes_[n.a].value;
                touch(n.a, pred);
                Tensor& gp = grad[n.a];
                for (int i = 0; i < pred.size(); ++i)
                    gp[i] += g[0] * 2.0 * (pred[i] - n.aux[i]) / pred.size();
                break;
            }
        }
    }

    std::map<int, Tensor> result;
    for (int pid : params_) {
        if (live[pid])
            result.emplace(pid, std::move(grad[pid]));
        else
            result.emplace(pid, Tensor::zeros(nodes_[static_cast<size_t>(pid)].value.shape()));
    }
    return result;
}

Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& params, double h) {
    if (h <= 0) throw std::invalid_argument("finite_diff_grad: h must be positive");
    Tensor g(params.shape());
    Tensor p = params;
    for (int i = 0; i < p.size(); ++i) {
        const double orig = p[i];
        p[i] = orig + h;
        const double fp = f(p);
        p[i] = orig - h;
        const double fm = f(p);
        p[i] = orig;
        g[i] = (fp - fm) / (2.0 * h);
    }
    return g;
}

GradCheckReport grad_check(
    const std::function<EvalResult(const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& params,
    const std::vector<Tensor>& analytic_grads,
    double h, double tol) {
    if (params.size() != analytic_grads.size())
        throw std::invalid_argument("grad_check: params/grads count mismatch");

    GradCheckReport report;
    std::vector<Tensor> p = params;
    const double kink = 10.0 * h;

    for (size_t t = 0; t < p.size(); ++t) {
        for (int i = 0; i < p[t].size(); ++i) {
            const double orig = p[t][i];
            p[t][i] = orig + h;
            const EvalResult rp = f(p);
            p[t][i] = orig - h;
            const EvalResult rm = f(p);
            p[t][i] = orig;

            if (rp.min_hard_gate_preact_abs < kink || rm.min_hard_gate_preact_abs < kink) {
                ++report.coords_excluded;
                continue;
            }
            const double fd = (rp.value - rm.value) / (2.0 * h);
            const double ad = analytic_grads[t][i];
            // central differences carry cancellation noise ~ eps*|f|/h; a
            // coordinate whose gradient sits below what that noise can
            // resolve at tol is unmeasurable by this oracle, like a kink
            const double f_scale = std::max({std::abs(rp.value), std::abs(rm.value), 1.0});
            const double fd_noise = 2.0 * std::numeric_limits<double>::epsilon() * f_scale / h;
            if (std::max(std::abs(ad), std::abs(fd)) * tol < fd_noise) {
                ++report.coords_excluded;
                continue;
            }
            const double rel = std::abs(ad - fd) / std::max({std::abs(ad), std::abs(fd), 1e-8});
            report.max_rel_err = std::max(report.max_rel_err, rel);
            ++report.coords_checked;
        }
    }
    report.pass = report.max_rel_err <= tol;
    return report;
}

}  // namespace galu
