#pragma once

#include <functional>
#include <memory>
#include <vector>

#include "divgce/tensor.hpp"

namespace divgce::ad {

struct Node;
using NodePtr = std::shared_ptr<Node>;

/// A value in the reverse-mode tape. `backward` reads `grad` of this node and
/// accumulates into the parents' `grad`.
struct Node {
  Tensor value;
  Tensor grad;
  bool requires_grad = false;
  std::vector<NodePtr> parents;
  std::function<void(Node&)> backward;
};

/// Handle to a tape node. Copies share the node.
class Var {
 public:
  Var() = default;
  explicit Var(NodePtr node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  const Tensor& grad() const { return node_->grad; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_ && node_->requires_grad; }
  const NodePtr& node() const { return node_; }

 private:
  NodePtr node_;
};

/// Tracked leaf; receives a gradient in `backward`.
Var parameter(Tensor value);
/// Untracked leaf.
Var constant(Tensor value);

/// Builds an op result. If no parent is tracked the result is a constant and
/// `fn` is dropped. Non-finite values are rejected.
Var make_result(Tensor value, std::vector<Var> parents, std::function<void(Node&)> fn,
                const char* op_name);

/// Gradient buffer of a parent, allocated on first use.
Tensor& grad_of(Node& node);

enum class BinaryOp { add, sub, mul };

/// Elementwise op. Shapes must match, or one side must hold a single value.
Var binary(const Var& a, const Var& b, BinaryOp op);
inline Var operator+(const Var& a, const Var& b) { return binary(a, b, BinaryOp::add); }
inline Var operator-(const Var& a, const Var& b) { return binary(a, b, BinaryOp::sub); }
inline Var operator*(const Var& a, const Var& b) { return binary(a, b, BinaryOp::mul); }

Var sum(const Var& x);

/// Cross-correlation of N x Cin x H x W input with Cout x Cin x kh x kw kernel.
Var conv2d(const Var& input, const Var& kernel, std::size_t stride = 1, std::size_t padding = 0);
/// Adds a per-channel bias (length C) to N x C x H x W.
Var add_channel_bias(const Var& x, const Var& bias);
Var relu(const Var& x);
/// Non-overlapping max pooling; H and W must be divisible by `window`.
/// Ties route the gradient to the first maximum in row-major order.
Var max_pool2d(const Var& x, std::size_t window = 2);

/// Reverse pass from a single-value root. Gradients of every tracked node in
/// the graph are reset and then recomputed, so repeated calls do not
/// accumulate across passes.
void backward(const Var& root);

}  // namespace divgce::ad
