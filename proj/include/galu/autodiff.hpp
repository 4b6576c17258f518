#pragma once

#include <functional>
#include <map>
#include <vector>

#include "galu/tensor.hpp"

namespace galu {

/// Reverse-mode tape over the forward primitives. A tape is built per forward
/// pass, confined to one thread, and discarded after backward.
class Tape {
public:
    int input(Tensor value);                 // constant leaf, no gradient
    int param(Tensor value);                 // trainable leaf
    int matvec(int w, int z);
    int conv1d(int kernel, int z);
    int gap(int z);
    int max_pool(int z, int window);
    int relu(int q);
    int identity(int q);
    // q masked by a fixed gate tensor; the mask is a constant, so nothing
    // flows back toward whatever produced it
    int hard_gate(int q, const Tensor& gates);
    int sigmoid_gate(int q, double beta);    // logistic(beta * q)
    int mul(int a, int b);                   // elementwise
    int add(int a, int b);
    int scale(int a, double c);
    int reshape(int a, std::vector<int> shape);
    int select(int z, int index);            // scalar pick
    int softmax_ce(int logits, int label);   // scalar loss
    int mse(int pred, const Tensor& target); // scalar loss

    const Tensor& value(int id) const;
    const std::vector<int>& params() const { return params_; }

    /// Gradients of a scalar output w.r.t. every registered parameter.
    /// Parameters the output does not depend on get zero tensors.
    std::map<int, Tensor> backward(int output) const;

private:
    enum class Op {
        Input, Param, MatVec, Conv1d, Gap, MaxPool, Relu, Identity,
        HardGate, SigmoidGate, Mul, Add, Scale, Reshape, Select, SoftmaxCe, Mse
    };
    struct Node {
        Op op;
        int a = -1, b = -1;
        Tensor value;
        Tensor aux;        // gate mask / mse target
        double scalar = 0; // beta / scale factor
        int index = 0;     // select index / label / pool window
    };
    int push(Node n);
    std::vector<Node> nodes_;
    std::vector<int> params_;
};

/// Central-difference gradient of a scalar function of one parameter tensor.
Tensor finite_diff_grad(const std::function<double(const Tensor&)>& f,
                        const Tensor& params, double h);

/// One forward evaluation: the scalar value plus the smallest |preactivation|
/// seen at any hard gate (infinity when the model has none). Used to spot
/// coordinates where central differences straddle a gate flip.
struct EvalResult {
    double value = 0.0;
    double min_hard_gate_preact_abs = 0.0;
};

struct GradCheckReport {
    double max_rel_err = 0.0;
    int coords_checked = 0;
    int coords_excluded = 0;
    bool pass = false;
};

/// Compares analytic gradients against central differences, coordinate by
/// coordinate, over a list of parameter tensors. A coordinate is excluded
/// when either perturbed evaluation reports a hard-gate preactivation within
/// 10*h of zero.
GradCheckReport grad_check(
    const std::function<EvalResult(const std::vector<Tensor>&)>& f,
    const std::vector<Tensor>& params,
    const std::vector<Tensor>& analytic_grads,
    double h, double tol);

}  // namespace galu
