#include "planlm/autodiff/tensor.hpp"

#include <algorithm>
#include <stdexcept>
#include <unordered_set>

#include "planlm/errors.hpp"

namespace planlm::ad {
namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

std::size_t numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += ", ";
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) { return full(std::move(shape), 0.0f, requires_grad); }

Tensor Tensor::full(Shape shape, float value, bool requires_grad) {
  auto n = std::make_shared<Node>();
  n->value.assign(numel(shape), value);
  n->shape = std::move(shape);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::from(Shape shape, std::vector<float> values, bool requires_grad) {
  if (numel(shape) != values.size()) {
    throw ValidationError("tensor shape " + shape_str(shape) + " does not match " +
                          std::to_string(values.size()) + " values");
  }
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(values);
  n->requires_grad = requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::scalar(float value) { return from({1}, {value}); }

std::size_t Tensor::rows() const {
  const auto& s = node_->shape;
  if (s.size() == 1) return 1;
  std::size_t r = 1;
  for (std::size_t i = 0; i + 1 < s.size(); ++i) r *= s[i];
  return r;
}

float Tensor::item() const {
  if (size() != 1) throw ValidationError("item() on tensor of shape " + shape_str(shape()));
  return node_->value[0];
}

void Tensor::zero_grad() {
  if (has_grad()) std::fill(node_->grad.begin(), node_->grad.end(), 0.0f);
}

Tensor Tensor::clone() const {
  auto n = std::make_shared<Node>();
  n->shape = node_->shape;
  n->value = node_->value;
  n->requires_grad = node_->requires_grad;
  return Tensor(std::move(n));
}

Tensor Tensor::detach() const {
  Tensor t = clone();
  t.set_requires_grad(false);
  return t;
}

void backward(const Tensor& loss) {
  if (!loss.defined() || loss.size() != 1) {
    throw ValidationError("backward() requires a scalar loss, got shape " +
                          (loss.defined() ? shape_str(loss.shape()) : std::string("<undefined>")));
  }
  Node* root = loss.node();
  if (!root->requires_grad) return;

  // Iterative post-order DFS gives a topological order.
  std::vector<Node*> order;
  std::unordered_set<Node*> visited;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  visited.insert(root);
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && visited.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }

  root->ensure_grad()[0] += 1.0f;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward && n->grad.size() == n->value.size()) {
      for (auto& p : n->parents) {
        if (p->requires_grad) p->ensure_grad();
      }
      n->backward(*n);
    }
  }
}

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

namespace detail {

Tensor make_result(Shape shape, std::initializer_list<const Tensor*> parents) {
  auto n = std::make_shared<Node>();
  n->value.assign(numel(shape), 0.0f);
  n->shape = std::move(shape);
  if (g_grad_enabled) {
    for (const Tensor* p : parents) {
      if (p->defined() && p->requires_grad()) {
        n->requires_grad = true;
        break;
      }
    }
    if (n->requires_grad) {
      for (const Tensor* p : parents) {
        if (p->defined()) n->parents.push_back(p->ptr());
      }
    }
  }
  return Tensor(std::move(n));
}

bool records(const Tensor& result) { return result.requires_grad(); }

}  // namespace detail
}  // namespace planlm::ad
