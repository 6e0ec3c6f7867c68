#pragma once

// Dense row-major float64 tensors with reverse-mode differentiation.
//
// A Tensor is a cheap handle onto a shared graph node. Operations that see at
// least one input with requires_grad (and grad mode enabled) record their
// inputs and a backward closure on the result node; backward() on a scalar
// replays those closures in reverse topological order.

#include <cstddef>
#include <functional>
#include <memory>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace texhash {

using Shape = std::vector<std::size_t>;

std::size_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

// Thrown for any operand-shape violation; the message names the op and the
// offending extents.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

namespace detail {

struct Node {
  Shape shape;
  std::vector<double> value;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  const char* op = "leaf";
  std::vector<std::shared_ptr<Node>> inputs;
  // Reads this->grad and accumulates into inputs[i]->grad for inputs that
  // require gradients.
  std::function<void(Node&)> backward;

  bool is_leaf() const { return inputs.empty(); }
  std::vector<double>& ensure_grad() {
    if (grad.empty()) grad.assign(value.size(), 0.0);
    return grad;
  }
};

}  // namespace detail

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> values);

  static Tensor scalar(double v) { return Tensor(Shape{1}, std::vector<double>{v}); }
  static Tensor randn(Shape shape, std::mt19937_64& rng, double stddev, double mean = 0.0);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t numel() const { return node_->value.size(); }

  std::span<const double> data() const { return node_->value; }
  // Mutable access is meant for leaves (parameter updates, test setup).
  std::span<double> data_mut() { return node_->value; }
  double item() const;

  bool requires_grad() const { return node_ && node_->requires_grad; }
  Tensor& set_requires_grad(bool on = true);
  bool is_leaf() const { return node_->is_leaf(); }

  bool has_grad() const { return !node_->grad.empty(); }
  // Empty span when no gradient has been accumulated yet.
  std::span<const double> grad() const { return node_->grad; }
  std::span<double> grad_mut() { return node_->ensure_grad(); }
  void zero_grad();

  // Accumulates d(this)/d(leaf) into every reachable leaf that requires
  // gradients. This tensor must hold exactly one element.
  void backward() const;

  // Same values, no graph history, requires_grad = false.
  Tensor detach() const;
  // Deep copy of values; the copy is an independent leaf.
  Tensor clone() const;

  const std::shared_ptr<detail::Node>& node() const { return node_; }

  // Builds an op result. When grad mode is on and some input requires
  // gradients, the inputs and backward closure are kept; otherwise both are
  // dropped and the result is a constant.
  static Tensor make_result(Shape shape, std::vector<double> value, std::vector<Tensor> inputs,
                            const char* op, std::function<void(detail::Node&)> backward);

 private:
  explicit Tensor(std::shared_ptr<detail::Node> node) : node_(std::move(node)) {}
  std::shared_ptr<detail::Node> node_;
};

// Ordered list of graph nodes reachable from a root, inputs before users.
class Tape {
 public:
  static Tape record(const Tensor& root);
  const std::vector<detail::Node*>& nodes() const { return nodes_; }
  std::size_t size() const { return nodes_.size(); }

 private:
  std::vector<detail::Node*> nodes_;
};

bool grad_enabled();

// Disables graph recording on the current thread for its lifetime.
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

}  // namespace texhash
