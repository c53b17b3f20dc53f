#pragma once

#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "fusionseg/common.hpp"

namespace fusionseg {

using Shape = std::vector<int>;

inline int64_t numel(const Shape& s) {
  int64_t n = 1;
  for (int d : s) n *= d;
  return n;
}

class Gradients;
struct Node;

// Backward rule: given this node and its accumulated output gradient,
// push gradients into the parents' buffers.
using BackwardFn = std::function<void(Node&, const std::vector<double>&, Gradients&)>;

struct Node {
  Shape shape;
  std::vector<double> value;
  bool requires_grad = false;
  std::vector<std::shared_ptr<Node>> parents;
  BackwardFn backward;
  std::string name;  // set for parameters
};

// Value handle plus position in the recorded computation graph.
// Copies share the underlying node.
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : node_(std::move(n)) {}

  static Tensor zeros(Shape s);
  static Tensor full(Shape s, double v);
  static Tensor from(Shape s, std::vector<double> v);
  // Leaf with requires_grad set; the unit of optimization.
  static Tensor param(Shape s, std::vector<double> v, std::string name);

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  int dim(int i) const { return node_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(node_->shape.size()); }
  int64_t size() const { return static_cast<int64_t>(node_->value.size()); }
  bool requires_grad() const { return node_ && node_->requires_grad; }

  double* data() { return node_->value.data(); }
  const double* data() const { return node_->value.data(); }
  std::vector<double>& values() { return node_->value; }
  const std::vector<double>& values() const { return node_->value; }

  double item() const {
    if (size() != 1) throw ShapeError(cat("item() on tensor of shape ", shape_str(shape())));
    return node_->value[0];
  }

  const std::shared_ptr<Node>& node() const { return node_; }
  Node* raw() const { return node_.get(); }
  const std::string& name() const { return node_->name; }

 private:
  std::shared_ptr<Node> node_;
};

// Per-backward-pass gradient buffers. Gradients live outside the nodes so
// concurrent backward passes over shared parameters never touch shared
// mutable state.
class Gradients {
 public:
  std::vector<double>& buf(const Node* n) {
    auto it = m_.find(n);
    if (it == m_.end()) {
      it = m_.emplace(n, std::vector<double>(n->value.size(), 0.0)).first;
    }
    return it->second;
  }
  const std::vector<double>* find(const Node* n) const {
    auto it = m_.find(n);
    return it == m_.end() ? nullptr : &it->second;
  }
  bool has(const Tensor& t) const { return m_.count(t.raw()) != 0; }
  const std::vector<double>& at(const Tensor& t) const {
    auto it = m_.find(t.raw());
    if (it == m_.end()) throw ValidationError("no gradient recorded for tensor " + t.name());
    return it->second;
  }
  size_t entries() const { return m_.size(); }

 private:
  std::unordered_map<const Node*, std::vector<double>> m_;
};

// Reverse-mode sweep from a scalar root.
Gradients backward(const Tensor& root);

bool grad_enabled();
void set_grad_enabled(bool on);

struct NoGradGuard {
  NoGradGuard() : prev_(grad_enabled()) { set_grad_enabled(false); }
  ~NoGradGuard() { set_grad_enabled(prev_); }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;

 private:
  bool prev_;
};

// Graph-building helper shared by all ops: records parents and the backward
// rule only when grad mode is on and some parent needs gradients.
Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents, BackwardFn fn);

}  // namespace fusionseg
