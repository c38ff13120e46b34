#pragma once

#include <cstddef>
#include <functional>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include "trukan/memory.hpp"

namespace trukan {

using Buffer = std::vector<double, memory::TrackedAllocator<double>>;

struct Shape {
  std::size_t rows = 0;
  std::size_t cols = 0;

  std::size_t size() const { return rows * cols; }
  bool operator==(const Shape&) const = default;
  std::string str() const;
};

class Tensor;
struct Node;

// Backward rule of a recorded op. Receives the cotangent of the op output and
// the output values, and accumulates cotangents into the op inputs.
using BackwardFn = std::function<void(std::span<const double> grad_out, std::span<const double> out)>;

// One recorded operation in the dynamic graph.
struct Node {
  std::string op_name;
  std::vector<Tensor> inputs;
  BackwardFn backward;
};

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad;  // empty until first accumulation
  bool requires_grad = false;
  std::shared_ptr<Node> node;
};

// Dense row-major 2-D array of doubles with an optional gradient slot.
//
// Tensor is a shared handle: copies alias the same storage, which is how layers
// and optimizers share parameters. Use clone() or detach() for a deep copy.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(std::size_t rows, std::size_t cols, bool requires_grad = false);
  static Tensor full(std::size_t rows, std::size_t cols, double value, bool requires_grad = false);
  static Tensor from(std::size_t rows, std::size_t cols, std::span<const double> values,
                     bool requires_grad = false);
  static Tensor from(std::size_t rows, std::size_t cols, std::initializer_list<double> values,
                     bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor eye(std::size_t n);
  // Takes ownership of an already filled buffer.
  static Tensor adopt(Shape shape, Buffer data, bool requires_grad = false);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::size_t rows() const { return impl_->shape.rows; }
  std::size_t cols() const { return impl_->shape.cols; }
  std::size_t size() const { return impl_->data.size(); }

  std::span<const double> data() const { return impl_->data; }
  std::span<double> data_mut() const { return impl_->data; }
  double at(std::size_t r, std::size_t c) const { return impl_->data[r * cols() + c]; }
  double item() const;

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool on);

  bool has_grad() const { return !impl_->grad.empty(); }
  // Gradient values; zeros when nothing has been accumulated yet.
  std::vector<double> grad() const;
  // Mutable gradient buffer, allocated and zero-filled on first use.
  std::span<double> grad_mut() const;
  void zero_grad();

  bool is_leaf() const { return impl_->node == nullptr; }
  const std::shared_ptr<Node>& node() const { return impl_->node; }

  // Same values, no graph history, requires_grad off.
  Tensor detach() const;
  // Deep copy keeping requires_grad, without graph history.
  Tensor clone() const;

  bool same_storage(const Tensor& other) const { return impl_ == other.impl_; }
  TensorImpl* impl() const { return impl_.get(); }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  std::shared_ptr<TensorImpl> impl_;

  friend Tensor make_result(std::string op_name, Shape shape, Buffer data, std::vector<Tensor> inputs,
                            BackwardFn backward);
};

// Creates the output tensor of an op and records it on the graph when gradient
// recording is enabled and any input requires a gradient. This is the extension
// point for custom fused operations.
Tensor make_result(std::string op_name, Shape shape, Buffer data, std::vector<Tensor> inputs,
                   BackwardFn backward);

// Reverse-mode sweep from a 1x1 root. Gradients accumulate into leaves, so
// calling twice without zero_grad() doubles them.
void backward(const Tensor& root);

// Disables graph recording on the current thread while alive.
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

// When on (per thread), every op checks its output for NaN/Inf and throws
// NumericError naming the op.
void set_anomaly_detection(bool on);
bool anomaly_detection();

class AnomalyGuard {
 public:
  AnomalyGuard() : previous_(anomaly_detection()) { set_anomaly_detection(true); }
  ~AnomalyGuard() { set_anomaly_detection(previous_); }
  AnomalyGuard(const AnomalyGuard&) = delete;
  AnomalyGuard& operator=(const AnomalyGuard&) = delete;

 private:
  bool previous_;
};

bool all_finite(std::span<const double> values);

}  // namespace trukan
