#include "trukan/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_set>

#include "trukan/error.hpp"

namespace trukan {

namespace {
thread_local bool t_grad_enabled = true;
thread_local bool t_anomaly = false;
}  // namespace

std::string Shape::str() const { return "(" + std::to_string(rows) + "x" + std::to_string(cols) + ")"; }

Tensor Tensor::zeros(std::size_t rows, std::size_t cols, bool requires_grad) {
  return full(rows, cols, 0.0, requires_grad);
}

Tensor Tensor::full(std::size_t rows, std::size_t cols, double value, bool requires_grad) {
  return adopt({rows, cols}, Buffer(rows * cols, value), requires_grad);
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::span<const double> values, bool requires_grad) {
  if (values.size() != rows * cols) {
    throw ShapeError("Tensor::from: " + std::to_string(values.size()) + " values for shape " +
                     Shape{rows, cols}.str());
  }
  return adopt({rows, cols}, Buffer(values.begin(), values.end()), requires_grad);
}

Tensor Tensor::from(std::size_t rows, std::size_t cols, std::initializer_list<double> values,
                    bool requires_grad) {
  return from(rows, cols, std::span<const double>(values.begin(), values.size()), requires_grad);
}

Tensor Tensor::scalar(double value, bool requires_grad) { return full(1, 1, value, requires_grad); }

Tensor Tensor::eye(std::size_t n) {
  Tensor t = zeros(n, n);
  for (std::size_t i = 0; i < n; ++i) t.impl_->data[i * n + i] = 1.0;
  return t;
}

Tensor Tensor::adopt(Shape shape, Buffer data, bool requires_grad) {
  if (data.size() != shape.size()) {
    throw ShapeError("Tensor::adopt: buffer of " + std::to_string(data.size()) + " for shape " + shape.str());
  }
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = shape;
  impl->data = std::move(data);
  impl->requires_grad = requires_grad;
  return Tensor(std::move(impl));
}

double Tensor::item() const {
  if (size() != 1) throw ShapeError("item() on tensor of shape " + shape().str());
  return impl_->data[0];
}

void Tensor::set_requires_grad(bool on) {
  if (!is_leaf()) throw ValueError("set_requires_grad on a non-leaf tensor");
  impl_->requires_grad = on;
}

std::vector<double> Tensor::grad() const {
  if (impl_->grad.empty()) return std::vector<double>(size(), 0.0);
  return {impl_->grad.begin(), impl_->grad.end()};
}

std::span<double> Tensor::grad_mut() const {
  if (impl_->grad.empty()) impl_->grad.assign(size(), 0.0);
  return impl_->grad;
}

void Tensor::zero_grad() {
  std::fill(impl_->grad.begin(), impl_->grad.end(), 0.0);
}

Tensor Tensor::detach() const { return adopt(shape(), impl_->data, false); }

Tensor Tensor::clone() const { return adopt(shape(), impl_->data, impl_->requires_grad); }

bool all_finite(std::span<const double> values) {
  return std::all_of(values.begin(), values.end(), [](double v) { return std::isfinite(v); });
}

Tensor make_result(std::string op_name, Shape shape, Buffer data, std::vector<Tensor> inputs,
                   BackwardFn backward) {
  if (t_anomaly && !all_finite(data)) {
    throw NumericError("non-finite value produced by op '" + op_name + "'");
  }
  const bool track = t_grad_enabled &&
                     std::any_of(inputs.begin(), inputs.end(), [](const Tensor& t) { return t.requires_grad(); });
  Tensor out = Tensor::adopt(shape, std::move(data), track);
  if (track) {
    auto node = std::make_shared<Node>();
    node->op_name = std::move(op_name);
    node->inputs = std::move(inputs);
    node->backward = std::move(backward);
    out.impl_->node = std::move(node);
  }
  return out;
}

void backward(const Tensor& root) {
  if (!root.defined() || root.size() != 1) {
    throw ShapeError("backward: root must be 1x1, got " + (root.defined() ? root.shape().str() : "undefined"));
  }
  if (!root.requires_grad()) throw ValueError("backward: root does not depend on any tensor requiring grad");

  // Iterative post-order DFS gives a topological order (inputs before outputs).
  std::vector<TensorImpl*> order;
  std::unordered_set<TensorImpl*> visited;
  std::vector<std::pair<TensorImpl*, std::size_t>> stack;
  stack.emplace_back(root.impl(), 0);
  visited.insert(root.impl());
  while (!stack.empty()) {
    auto& [impl, next] = stack.back();
    if (impl->node && next < impl->node->inputs.size()) {
      TensorImpl* child = impl->node->inputs[next++].impl();
      if (child->requires_grad && visited.insert(child).second) stack.emplace_back(child, 0);
      continue;
    }
    order.push_back(impl);
    stack.pop_back();
  }

  TensorImpl* r = root.impl();
  if (r->grad.empty()) r->grad.assign(1, 0.0);
  r->grad[0] += 1.0;

  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    TensorImpl* impl = *it;
    if (!impl->node) continue;
    if (!impl->grad.empty()) impl->node->backward(impl->grad, impl->data);
    // Interior cotangents are consumed once so that repeated sweeps only
    // accumulate into leaves.
    Buffer().swap(impl->grad);
  }
}

NoGradGuard::NoGradGuard() : previous_(t_grad_enabled) { t_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { t_grad_enabled = previous_; }
bool grad_enabled() { return t_grad_enabled; }

void set_anomaly_detection(bool on) { t_anomaly = on; }
bool anomaly_detection() { return t_anomaly; }

}  // namespace trukan
