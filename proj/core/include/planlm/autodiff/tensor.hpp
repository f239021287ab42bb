#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

namespace planlm::ad {

using Shape = std::vector<std::size_t>;

std::size_t numel(const Shape& shape);
std::string shape_str(const Shape& shape);

/// Graph node. `backward` reads this node's grad and accumulates into the
/// parents' grads; it is only set when the node requires grad.
struct Node {
  Shape shape;
  std::vector<float> value;
  std::vector<float> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backward;

  std::vector<float>& ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), 0.0f);
    return grad;
  }
};

/// Shared handle to a node. Copies alias the same storage; use clone() for a
/// deep copy.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> node) : node_(std::move(node)) {}

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, float value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<float> values, bool requires_grad = false);
  static Tensor scalar(float value);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::size_t dim(std::size_t i) const { return node_->shape.at(i); }
  std::size_t rank() const { return node_->shape.size(); }
  std::size_t size() const { return node_->value.size(); }
  /// Leading extent for rank-2 tensors; 1 for rank-1.
  std::size_t rows() const;
  /// Trailing extent.
  std::size_t cols() const { return node_->shape.back(); }

  std::span<float> data() { return node_->value; }
  std::span<const float> data() const { return node_->value; }
  std::span<float> grad() { return node_->ensure_grad(); }
  bool has_grad() const { return node_->grad.size() == node_->value.size(); }
  float item() const;

  bool requires_grad() const { return node_->requires_grad; }
  void set_requires_grad(bool on) { node_->requires_grad = on; }
  void zero_grad();

  Tensor clone() const;
  /// Same values, no history.
  Tensor detach() const;

  Node* node() const { return node_.get(); }
  const std::shared_ptr<Node>& ptr() const { return node_; }

 private:
  std::shared_ptr<Node> node_;
};

/// Reverse-mode sweep from a scalar loss; accumulates into grads of every
/// reachable node that requires grad. Throws on non-scalar input.
void backward(const Tensor& loss);

bool grad_enabled();

/// Disables graph recording in scope (inference).
class NoGradGuard {
 public:
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool previous_;
};

namespace detail {
/// Creates a result node, wiring parents when any of them requires grad and
/// recording is enabled.
Tensor make_result(Shape shape, std::initializer_list<const Tensor*> parents);
bool records(const Tensor& result);
}  // namespace detail

}  // namespace planlm::ad
