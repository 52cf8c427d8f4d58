#pragma once

// Tape-free reverse-mode autodiff over dsam::Tensor. Each op records its
// inputs and a backward closure; backward() walks the graph in reverse
// topological order from a scalar root.

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "dsam/kernels.hpp"
#include "dsam/tensor.hpp"

namespace dsam::ag {

struct Node {
    Tensor value;
    Tensor grad;  ///< empty until something flows into it
    bool requires_grad = false;
    std::vector<std::shared_ptr<Node>> inputs;
    std::function<void(Node&)> backward;

    Tensor& ensure_grad();
};

class Var {
public:
    Var() = default;
    /// Leaf variable. Trainable parameters pass requires_grad = true.
    explicit Var(Tensor value, bool requires_grad = false);

    bool defined() const noexcept { return static_cast<bool>(node_); }
    const Tensor& value() const { return node_->value; }
    /// In-place access for optimizers and weight loading; leaves only.
    Tensor& mutable_value() { return node_->value; }
    const Tensor& grad() const { return node_->grad; }
    bool requires_grad() const noexcept { return node_ && node_->requires_grad; }
    void set_requires_grad(bool on) { node_->requires_grad = on; }
    void zero_grad() { node_->grad = Tensor(); }
    const Tensor::Shape& shape() const { return node_->value.shape(); }

    const std::shared_ptr<Node>& node() const noexcept { return node_; }

private:
    std::shared_ptr<Node> node_;
    friend Var make_op(Tensor, std::vector<Var>, std::function<void(Node&)>);
};

/// Builds a graph node. The closure receives the node (with its grad filled)
/// and must accumulate into node.inputs[i] for inputs that require grad.
Var make_op(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward);

/// Adds g into input's gradient if it requires one.
void accumulate(Node& input, const Tensor& g);

/// Back-propagates from a scalar root (seed 1).
void backward(const Var& root);

// ---------------------------------------------------------------------------
// Elementwise. Binary ops accept equal shapes or a single-element operand.
// ---------------------------------------------------------------------------

Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& x, double s);
Var add_scalar(const Var& x, double s);
/// 1 - x
Var one_minus(const Var& x);
Var sigmoid(const Var& x);
/// tanh-approximated GELU
Var gelu(const Var& x);
Var square(const Var& x);

Var sum(const Var& x);
Var mean(const Var& x);

// ---------------------------------------------------------------------------
// Structural
// ---------------------------------------------------------------------------

/// Concatenates along axis 0 (channels for [C,H,W], rows for [N,D]).
Var concat(std::span<const Var> parts);
Var concat(std::initializer_list<Var> parts);
/// Rows/channels [begin, end) along axis 0.
Var slice(const Var& x, int begin, int end);
Var reshape(const Var& x, Tensor::Shape shape);
/// [C, H, W] -> [H*W, C]
Var to_tokens(const Var& x);
/// [H*W, C] -> [C, H, W]
Var from_tokens(const Var& t, int h, int w);
/// Mean over rows of [N, D] -> [1, D]
Var mean_rows(const Var& x);
/// [1, D] or [D] -> [D, H, W]
Var broadcast_spatial(const Var& v, int h, int w);

// ---------------------------------------------------------------------------
// Image and attention kernels
// ---------------------------------------------------------------------------

/// weight: [Cout, Cin, k, k]; bias may be undefined.
Var conv2d(const Var& x, const Var& weight, const Var& bias, kernels::Conv2dGeometry geo = {});
Var resize_bilinear(const Var& x, int out_h, int out_w);
/// Detail subbands of a single-level Haar transform stacked as [LH; HL; HH] -> [3C, H/2, W/2].
Var haar_details(const Var& x);
Var box_mean(const Var& x, int radius);
Var adaptive_avg_pool(const Var& x, int out_h, int out_w);
Var matmul(const Var& a, const Var& b, bool transpose_a = false, bool transpose_b = false);
/// Row-wise softmax of a [N, M] matrix.
Var softmax_rows(const Var& x);
/// x: [N, Din], weight: [Din, Dout], bias: [Dout] (may be undefined).
Var linear(const Var& x, const Var& weight, const Var& bias);

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

/// Mean binary cross-entropy between logits and a {0,1} target of the same shape.
Var bce_with_logits_mean(const Var& logits, const Tensor& target);

}  // namespace dsam::ag
