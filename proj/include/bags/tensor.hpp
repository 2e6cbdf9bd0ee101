#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#ifndef BAGS_REAL
#define BAGS_REAL double
#endif

namespace bags {

using Real = BAGS_REAL;
using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_numel(const Shape& shape);

/// Raised when operand shapes are incompatible. The message names both shapes.
class ShapeError : public std::invalid_argument {
 public:
  ShapeError(const std::string& op, const Shape& a, const Shape& b);
  explicit ShapeError(const std::string& what) : std::invalid_argument(what) {}
};

/// Raised when an operation leaves its mathematical domain (log of a
/// nonpositive value, division by zero, ...).
class DomainError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class Tensor;

namespace detail {

struct TensorImpl;

// Backward rule of one recorded operation. It reads the gradient of the
// output and accumulates into the inputs that require gradients.
struct Node {
  std::vector<Tensor> inputs;
  std::function<void(const TensorImpl& out)> backward;
  const char* name = "";
};

struct TensorImpl {
  Shape shape;
  std::vector<Real> data;
  std::vector<Real> grad;  // empty until a gradient arrives
  bool requires_grad = false;
  std::shared_ptr<Node> node;  // null for leaves
};

}  // namespace detail

/// Dense row-major tensor handle. Copies share storage; values of non-leaf
/// tensors never change after creation.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, Real value, bool requires_grad = false);
  static Tensor from(Shape shape, std::vector<Real> values, bool requires_grad = false);
  static Tensor scalar(Real value, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t dim() const { return impl_->shape.size(); }
  std::size_t size(std::size_t axis) const { return impl_->shape.at(axis); }
  std::size_t numel() const { return impl_->data.size(); }

  std::span<const Real> data() const { return impl_->data; }
  Real operator[](std::size_t i) const { return impl_->data[i]; }
  Real item() const;

  /// In-place access for leaf parameters (optimizer updates, initialization).
  std::span<Real> mutable_data();

  bool requires_grad() const { return impl_->requires_grad; }
  bool is_leaf() const { return impl_->node == nullptr; }
  bool has_grad() const { return !impl_->grad.empty(); }
  /// Gradient buffer; all zeros when nothing has been accumulated yet.
  std::span<const Real> grad() const;
  std::vector<Real> grad_or_zeros() const;
  std::span<Real> mutable_grad();
  void zero_grad() { impl_->grad.clear(); }

  /// Adds `g` into the gradient buffer, allocating it on first use.
  void accumulate_grad(std::span<const Real> g) const;

  /// Same values, cut from the graph.
  Tensor detach() const;

  const detail::TensorImpl* impl() const { return impl_.get(); }

  /// Builds an operation result. When any input requires a gradient the
  /// result is recorded on the graph with `backward`.
  static Tensor make_result(Shape shape, std::vector<Real> values, std::vector<Tensor> inputs,
                            std::function<void(const detail::TensorImpl&)> backward,
                            const char* name);

 private:
  explicit Tensor(std::shared_ptr<detail::TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<detail::TensorImpl> impl_;

  friend void backward(const Tensor& loss, bool retain_graph);
};

/// Reverse-mode sweep from a scalar loss. Every reachable tensor that
/// requires a gradient receives one; gradients accumulate additively.
/// Unless `retain_graph` is set the recorded nodes are released afterwards.
void backward(const Tensor& loss, bool retain_graph = false);

}  // namespace bags
