#include "bags/tensor.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>
#include <unordered_set>

namespace bags {

std::string to_string(const Shape& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1}, std::multiplies<>());
}

ShapeError::ShapeError(const std::string& op, const Shape& a, const Shape& b)
    : std::invalid_argument(op + ": incompatible shapes " + to_string(a) + " and " +
                            to_string(b)) {}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  return full(std::move(shape), Real(0), requires_grad);
}

Tensor Tensor::full(Shape shape, Real value, bool requires_grad) {
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->data.assign(shape_numel(shape), value);
  impl->shape = std::move(shape);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::from(Shape shape, std::vector<Real> values, bool requires_grad) {
  if (shape_numel(shape) != values.size()) {
    throw ShapeError("Tensor::from: shape " + to_string(shape) + " holds " +
                     std::to_string(shape_numel(shape)) + " values, got " +
                     std::to_string(values.size()));
  }
  auto impl = std::make_shared<detail::TensorImpl>();
  impl->shape = std::move(shape);
  impl->data = std::move(values);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

Tensor Tensor::scalar(Real value, bool requires_grad) {
  return from({}, {value}, requires_grad);
}

Real Tensor::item() const {
  if (numel() != 1) throw ShapeError("item() on tensor of shape " + to_string(shape()));
  return impl_->data[0];
}

std::span<Real> Tensor::mutable_data() {
  if (!is_leaf()) throw std::logic_error("mutable_data() on a non-leaf tensor");
  return impl_->data;
}

std::span<const Real> Tensor::grad() const {
  return impl_->grad;
}

std::vector<Real> Tensor::grad_or_zeros() const {
  if (impl_->grad.empty()) return std::vector<Real>(numel(), Real(0));
  return impl_->grad;
}

std::span<Real> Tensor::mutable_grad() {
  if (impl_->grad.empty()) impl_->grad.assign(numel(), Real(0));
  return impl_->grad;
}

void Tensor::accumulate_grad(std::span<const Real> g) const {
  auto& buf = impl_->grad;
  if (buf.empty()) {
    buf.assign(g.begin(), g.end());
    return;
  }
  for (std::size_t i = 0; i < buf.size(); ++i) buf[i] += g[i];
}

Tensor Tensor::detach() const {
  return from(shape(), impl_->data, false);
}

Tensor Tensor::make_result(Shape shape, std::vector<Real> values, std::vector<Tensor> inputs,
                           std::function<void(const detail::TensorImpl&)> backward,
                           const char* name) {
  Tensor out = from(std::move(shape), std::move(values), false);
  const bool track = std::any_of(inputs.begin(), inputs.end(),
                                 [](const Tensor& t) { return t.requires_grad(); });
  if (track) {
    out.impl_->requires_grad = true;
    auto node = std::make_shared<detail::Node>();
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    node->name = name;
    out.impl_->node = std::move(node);
  }
  return out;
}

void backward(const Tensor& loss, bool retain_graph) {
  if (!loss.defined() || loss.numel() != 1) {
    throw ShapeError("backward: loss must be a scalar, got shape " +
                     (loss.defined() ? to_string(loss.shape()) : std::string("<undefined>")));
  }
  if (!loss.requires_grad()) {
    throw std::invalid_argument("backward: loss is not on the graph");
  }

  // Iterative post-order DFS gives a topological order of the nodes.
  std::vector<detail::TensorImpl*> order;
  std::unordered_set<const detail::TensorImpl*> visited;
  std::vector<std::pair<detail::TensorImpl*, std::size_t>> stack;
  stack.emplace_back(loss.impl_.get(), 0);
  visited.insert(loss.impl_.get());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      detail::TensorImpl* child = impl->node->inputs[next++].impl_.get();
      if (child->requires_grad && child->node && visited.insert(child).second) {
        stack.emplace_back(child, 0);
      }
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  loss.impl_->grad.assign(1, Real(1));
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    detail::TensorImpl* impl = *it;
    if (impl->grad.empty()) continue;
    impl->node->backward(*impl);
  }
  if (!retain_graph) {
    for (detail::TensorImpl* impl : order) impl->node.reset();
  }
}

}  // namespace bags
