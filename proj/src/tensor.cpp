#include "fusionseg/tensor.hpp"

#include <algorithm>

namespace fusionseg {

namespace {
thread_local bool g_grad_enabled = true;
}

bool grad_enabled() { return g_grad_enabled; }
void set_grad_enabled(bool on) { g_grad_enabled = on; }

Tensor Tensor::zeros(Shape s) {
  auto n = std::make_shared<Node>();
  int64_t sz = numel(s);
  n->shape = std::move(s);
  n->value.assign(static_cast<size_t>(sz), 0.0);
  return Tensor(std::move(n));
}

Tensor Tensor::full(Shape s, double v) {
  Tensor t = zeros(std::move(s));
  std::fill(t.values().begin(), t.values().end(), v);
  return t;
}

Tensor Tensor::from(Shape s, std::vector<double> v) {
  if (numel(s) != static_cast<int64_t>(v.size()))
    throw ShapeError(cat("from(): ", v.size(), " values for shape ", shape_str(s)));
  auto n = std::make_shared<Node>();
  n->shape = std::move(s);
  n->value = std::move(v);
  return Tensor(std::move(n));
}

Tensor Tensor::param(Shape s, std::vector<double> v, std::string name) {
  Tensor t = from(std::move(s), std::move(v));
  t.node()->requires_grad = true;
  t.node()->name = std::move(name);
  return t;
}

Tensor make_op(Shape shape, std::vector<double> value, std::vector<Tensor> parents, BackwardFn fn) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(shape);
  n->value = std::move(value);
  if (g_grad_enabled) {
    bool need = false;
    for (const auto& p : parents)
      if (p.defined() && p.requires_grad()) need = true;
    if (need) {
      n->requires_grad = true;
      n->parents.reserve(parents.size());
      for (const auto& p : parents)
        if (p.defined()) n->parents.push_back(p.node());
      n->backward = std::move(fn);
    }
  }
  return Tensor(std::move(n));
}

Gradients backward(const Tensor& root) {
  if (!root.defined()) throw ValidationError("backward(): undefined tensor");
  if (root.size() != 1) throw ShapeError("backward(): root must be scalar");

  // Iterative post-order DFS; list ends up parents-before-children,
  // so we process it in reverse.
  std::vector<Node*> order;
  std::unordered_map<Node*, int> state;  // 0 unseen, 1 in progress, 2 done
  std::vector<Node*> stack;
  stack.push_back(root.raw());
  while (!stack.empty()) {
    Node* n = stack.back();
    int& st = state[n];
    if (st == 0) {
      st = 1;
      for (auto& p : n->parents) {
        if (p->requires_grad && state[p.get()] == 0) stack.push_back(p.get());
      }
    } else {
      stack.pop_back();
      if (st == 1) {
        st = 2;
        order.push_back(n);
      }
    }
  }

  Gradients gs;
  gs.buf(root.raw())[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (!n->backward) continue;
    const std::vector<double>* g = gs.find(n);
    if (!g) continue;
    n->backward(*n, *g, gs);
  }
  return gs;
}

}  // namespace fusionseg
