#include "mxq/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <unordered_set>
#include <utility>

namespace mxq {

std::size_t numel_of(const Shape& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) n *= d;
  return n;
}

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

namespace {
thread_local bool g_grad_enabled = true;
}  // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : previous_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = previous_; }

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad) {
  for (std::size_t d : shape) {
    if (d == 0) throw ShapeError("tensor: zero-sized dimension in " + shape_str(shape));
  }
  if (numel_of(shape) != values.size()) {
    throw ShapeError("tensor: shape " + shape_str(shape) + " needs " +
                     std::to_string(numel_of(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  impl_ = std::make_shared<TensorImpl>();
  impl_->shape = std::move(shape);
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), 0.0, requires_grad);
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  const std::size_t n = numel_of(shape);
  return Tensor(std::move(shape), std::vector<double>(n, value), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return Tensor({1}, {value}, requires_grad);
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= rank()) {
    throw ShapeError("tensor: axis " + std::to_string(axis) + " out of range for " +
                     shape_str(shape()));
  }
  return impl_->shape[axis];
}

double Tensor::item() const {
  if (numel() != 1) throw ShapeError("item: tensor " + shape_str(shape()) + " is not a scalar");
  return impl_->data[0];
}

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw Error("set_requires_grad: only leaf tensors can be toggled");
  impl_->requires_grad = on;
}

bool Tensor::has_non_finite() const {
  auto bad = [](double v) { return !std::isfinite(v); };
  return std::any_of(impl_->data.begin(), impl_->data.end(), bad) ||
         std::any_of(impl_->grad.begin(), impl_->grad.end(), bad);
}

Tensor Tensor::clone(bool requires_grad) const {
  return Tensor(impl_->shape, impl_->data, requires_grad);
}

Tensor Tensor::make_result(Shape shape, std::vector<double> values, std::string op,
                           const std::vector<Tensor>& inputs, BackwardFn backward,
                           bool custom_gradient) {
  Tensor out(std::move(shape), std::move(values));
  const bool track = g_grad_enabled && std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    auto node = std::make_shared<TapeNode>();
    node->op = std::move(op);
    node->inputs.reserve(inputs.size());
    for (const Tensor& t : inputs) node->inputs.push_back(t.impl_);
    node->backward = std::move(backward);
    node->custom_gradient = custom_gradient;
    out.impl_->node = std::move(node);
    out.impl_->requires_grad = true;
  }
  return out;
}

void Tensor::backward() const {
  if (numel() != 1) {
    throw ShapeError("backward: root must be a scalar, got " + shape_str(shape()));
  }
  if (!requires_grad()) return;

  // Iterative post-order DFS gives a topological order (inputs before users).
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> seen;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(impl_.get(), 0);
  seen.insert(impl_.get());
  while (!stack.empty()) {
    auto& [t, next] = stack.back();
    if (t->node && next < t->node->inputs.size()) {
      TensorImpl* child = t->node->inputs[next++].get();
      if (child->requires_grad && seen.insert(child).second) stack.emplace_back(child, 0);
    } else {
      order.push_back(t);
      stack.pop_back();
    }
  }

  if (impl_->grad.empty()) impl_->grad.assign(1, 0.0);
  impl_->grad[0] += 1.0;

  std::vector<std::vector<double>*> slots;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* t = *it;
    if (!t->node || t->grad.empty()) continue;
    slots.clear();
    for (const auto& in : t->node->inputs) {
      if (!in->requires_grad) {
        slots.push_back(nullptr);
        continue;
      }
      if (in->grad.empty()) in->grad.assign(in->data.size(), 0.0);
      slots.push_back(&in->grad);
    }
    t->node->backward(t->grad, slots);
    // Intermediate buffers are no longer needed once propagated.
    if (t != impl_.get()) std::vector<double>().swap(t->grad);
  }
}

}  // namespace mxq
