#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace mxq {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity where a finite value is required.
class NonFiniteValue : public Error {
 public:
  using Error::Error;
};

using Shape = std::vector<std::size_t>;

std::size_t numel_of(const Shape& shape);
std::string shape_str(const Shape& shape);

struct TensorImpl;

/// Receives the output gradient of a node and accumulates into the gradient
/// buffers of its inputs. `input_grads[i]` is null when input i does not
/// require a gradient.
using BackwardFn = std::function<void(std::span<const double> out_grad,
                                      std::span<std::vector<double>*> input_grads)>;

/// One recorded operation on the tape.
struct TapeNode {
  std::string op;
  std::vector<std::shared_ptr<TensorImpl>> inputs;
  BackwardFn backward;
  bool custom_gradient = false;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<TapeNode> node;  // null for leaves
};

/// Dense row-major tensor of doubles with reverse-mode autodiff support.
///
/// A Tensor is a cheap handle; copies alias the same storage. Use `clone()`
/// for a detached deep copy. Operations record a TapeNode whenever any input
/// requires a gradient, so the graph is rebuilt on every forward pass.
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim(std::size_t axis) const;
  std::size_t rank() const { return impl_->shape.size(); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> mutable_data() { return impl_->data; }
  double item() const;
  double at(std::size_t flat_index) const { return impl_->data.at(flat_index); }

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on);
  bool is_leaf() const { return impl_->node == nullptr; }

  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; an all-zero view is returned as an empty span.
  std::span<const double> grad() const { return impl_->grad; }
  std::span<double> mutable_grad() { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  /// True when data or grad contains NaN or Inf.
  bool has_non_finite() const;

  /// Deep copy with no tape history.
  Tensor clone(bool requires_grad = false) const;

  /// Reverse sweep from a scalar root. Gradients accumulate into every
  /// reachable tensor that requires grad.
  void backward() const;

  const std::shared_ptr<TensorImpl>& impl() const { return impl_; }
  const TapeNode* node() const { return impl_->node.get(); }

  /// Builds the result of an operation and records it on the tape when any
  /// input requires grad. Used by the primitive set and by custom-gradient
  /// operators (quantizer, CTC).
  static Tensor make_result(Shape shape, std::vector<double> values, std::string op,
                            const std::vector<Tensor>& inputs, BackwardFn backward,
                            bool custom_gradient = false);

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;
};

/// Disables tape recording on this thread while alive.
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

}  // namespace mxq
