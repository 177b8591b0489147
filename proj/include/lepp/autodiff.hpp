#pragma once

// Reverse-mode automatic differentiation over Tensor values.
//
// A Var is a handle to a graph Node. Every op computes its value eagerly and,
// when any input requires a gradient, records a backward rule that
// accumulates into the inputs' grad buffers. Nodes that do not require a
// gradient keep no parents, so inference-only expressions build no graph.
//
// Broadcasting is limited to scalar right-hand operands; everything else needs
// an explicit reshape.

#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "lepp/tensor.hpp"

namespace lepp::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

struct Node {
    Tensor value;
    Tensor grad;  // empty until a gradient reaches this node
    std::vector<NodePtr> parents;
    std::function<void(Node&)> backward_rule;
    std::string op;
    bool requires_grad = false;
    bool consumed = false;  // set on a loss node once back-propagated

    bool is_leaf() const { return parents.empty(); }
    // Zero-initialised gradient buffer of the value's shape.
    Tensor& grad_buffer();
};

class Var {
public:
    Var() = default;
    explicit Var(NodePtr node) : node_(std::move(node)) {}

    const Tensor& value() const { return node_->value; }
    const Shape& shape() const { return node_->value.shape(); }
    std::size_t size() const { return node_->value.size(); }
    bool requires_grad() const { return node_->requires_grad; }
    // Gradient after backward(); a zero tensor if none reached this node.
    Tensor grad() const;

    Node& node() const { return *node_; }
    const NodePtr& ptr() const { return node_; }
    explicit operator bool() const { return static_cast<bool>(node_); }

private:
    NodePtr node_;
};

Var constant(Tensor value);
Var parameter(Tensor value);
// Same value, no gradient flow.
Var detach(const Var& a);

// Builds an op node. The rule is dropped when no parent requires a gradient.
// Throws NonFiniteError if `value` contains NaN/Inf.
Var make_op(std::string op, Tensor value, std::vector<Var> parents, std::function<void(Node&)> rule);

// Elementwise. `b` must have a's shape or be a single element.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var div(const Var& a, const Var& b);
Var scale(const Var& a, double s);
Var exp(const Var& a);
Var tanh(const Var& a);
Var silu(const Var& a);
Var elu(const Var& a);
Var square(const Var& a);

Var matmul(const Var& a, const Var& b);
// y[out] = W[out,in] x[in] + b[out]; x may also be row-batched [L,in] -> [L,out]
Var linear(const Var& x, const Var& w, const Var& b);

Var reshape(const Var& a, Shape shape);
// Concatenation along axis 0; trailing dimensions must agree.
Var concat(const std::vector<Var>& parts);
// Rows [begin, begin+count) along axis 0.
Var slice(const Var& a, std::size_t begin, std::size_t count);

// x [C_in,H,W], w [C_out,C_in,kh,kw] -> [C_out,H',W'] (cross-correlation)
Var conv2d(const Var& x, const Var& w, std::size_t stride, std::size_t padding);
// Exact adjoint of conv2d with the same weight, stride and padding:
// x [C_out,H',W'] -> [C_in,(H'-1)*stride-2*padding+kh, ...]
Var transposed_conv2d(const Var& x, const Var& w, std::size_t stride, std::size_t padding);
// x [C,H,W] + b[c] on every pixel of channel c
Var add_channel_bias(const Var& x, const Var& b);

Var sum(const Var& x, const std::vector<std::size_t>& axes);
Var mean(const Var& x, const std::vector<std::size_t>& axes);
Var sum_all(const Var& x);
Var mean_all(const Var& x);
Var mse(const Var& pred, const Var& target);

// Reverse sweep from a scalar loss. Gradients accumulate into leaves that
// require them; call zero_grad between steps. Backpropagating the same loss
// twice throws.
void backward(const Var& loss);
void zero_grad(const std::vector<Var>& params);

}  // namespace lepp::ad
