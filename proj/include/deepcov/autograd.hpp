#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <vector>

#include "deepcov/rng.hpp"
#include "deepcov/tensor.hpp"

namespace deepcov::ag {

enum class Mode { Train, Eval };

/// A vertex of the computation record. Leaves have no backward function.
struct Node {
  Tensor value;
  Tensor grad;  // empty until a gradient reaches this node
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> parents;
  // Propagates this node's grad into its parents' grads.
  std::function<void(Node&)> backward;

  Tensor& grad_buffer();
};

/// Shared handle to a node. Copies alias the same value and gradient.
class Var {
 public:
  Var() = default;
  explicit Var(Tensor value, bool requires_grad = false);
  explicit Var(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  const Tensor& value() const { return node_->value; }
  Tensor& mutable_value() { return node_->value; }
  const Shape& shape() const { return node_->value.shape(); }
  bool requires_grad() const { return node_->requires_grad; }
  bool has_grad() const { return !node_->grad.empty(); }
  /// Gradient, or zeros of the value's shape if none has been accumulated.
  Tensor grad() const;
  void zero_grad() { node_->grad = Tensor(); }
  bool valid() const { return static_cast<bool>(node_); }
  const std::shared_ptr<Node>& node() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// While alive, ops on this thread record no backward information.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};
bool grad_enabled();

/// Accumulates a hash of every ReLU activation pattern evaluated on this
/// thread while alive. Gradient checking uses it to detect finite-difference
/// probes that straddle a kink.
class KinkMonitor {
 public:
  KinkMonitor();
  ~KinkMonitor();
  KinkMonitor(const KinkMonitor&) = delete;
  KinkMonitor& operator=(const KinkMonitor&) = delete;

  std::uint64_t signature() const { return hash_; }
  void record(std::uint64_t h);

 private:
  KinkMonitor* previous_;
  std::uint64_t hash_ = 0x243f6a8885a308d3ULL;
};

struct Conv2dSpec {
  std::size_t stride = 1;
  std::size_t padding = 0;
};

/// input N x C_in x H x W, weights C_out x C_in x kh x kw, bias C_out.
/// Cross-correlation (no kernel flip) with zero padding.
Var conv2d(const Var& input, const Var& weights, const Var& bias, Conv2dSpec spec);
/// input N x F_in, weights F_in x F_out, bias F_out.
Var dense(const Var& input, const Var& weights, const Var& bias);
/// max(x, 0); the derivative at exactly 0 is taken as 0.
Var relu(const Var& input);
/// Non-overlapping p x p mean pooling; p must divide H and W.
Var avg_pool2d(const Var& input, std::size_t pool);
/// N x ... -> N x prod(...)
Var flatten(const Var& input);
Var reshape(const Var& input, Shape shape);
/// Inverted dropout: train mode zeroes each element with probability `rate`
/// and scales survivors by 1/(1-rate); eval mode is the identity.
Var dropout(const Var& input, double rate, Mode mode, Rng& rng);
/// Train mode adds i.i.d. N(0, sigma^2); eval mode is the identity.
Var gaussian_noise(const Var& input, double sigma, Mode mode, Rng& rng);
/// Mean of squared differences; pred and target must have equal element counts.
Var mse_loss(const Var& pred, const Var& target);

Var add(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var sum(const Var& a);

/// Reverse pass from a scalar. Every requires_grad node reachable from `loss`
/// receives its gradient, accumulated across fan-out; each node's backward runs
/// exactly once, in reverse topological order.
void backward(const Var& loss);

}  // namespace deepcov::ag
