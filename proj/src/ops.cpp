#include "trukan/ops.hpp"

#include <Eigen/Core>
#include <cmath>

#include "trukan/error.hpp"

namespace trukan {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using CMap = Eigen::Map<const RowMat>;
using MMap = Eigen::Map<RowMat>;

CMap view(std::span<const double> s, std::size_t r, std::size_t c) {
  return CMap(s.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}
MMap view(std::span<double> s, std::size_t r, std::size_t c) {
  return MMap(s.data(), static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c));
}

const char* op_name(ElementwiseOp op) {
  switch (op) {
    case ElementwiseOp::Add: return "add";
    case ElementwiseOp::Sub: return "sub";
    case ElementwiseOp::Mul: return "mul";
  }
  return "?";
}

}  // namespace

void accumulate(const Tensor& t, std::span<const double> g) {
  if (!t.requires_grad()) return;
  auto dst = t.grad_mut();
  for (std::size_t i = 0; i < g.size(); ++i) dst[i] += g[i];
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.cols() != b.rows()) {
    throw ShapeError("matmul: inner dimensions differ, " + a.shape().str() + " * " + b.shape().str());
  }
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  Buffer out(m * n);
  view(std::span<double>(out), m, n).noalias() = view(a.data(), m, k) * view(b.data(), k, n);
  return make_result("matmul", {m, n}, std::move(out), {a, b},
                     [a, b, m, k, n](std::span<const double> g, std::span<const double>) mutable {
                       auto G = view(g, m, n);
                       if (a.requires_grad()) view(a.grad_mut(), m, k).noalias() += G * view(b.data(), k, n).transpose();
                       if (b.requires_grad()) view(b.grad_mut(), k, n).noalias() += view(a.data(), m, k).transpose() * G;
                     });
}

Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b) {
  const bool a_scalar = a.size() == 1 && b.size() != 1;
  const bool b_scalar = b.size() == 1 && a.size() != 1;
  if (!a_scalar && !b_scalar && a.shape() != b.shape()) {
    throw ShapeError(std::string(op_name(op)) + ": incompatible shapes " + a.shape().str() + " and " +
                     b.shape().str());
  }
  const Shape shape = a_scalar ? b.shape() : a.shape();
  const std::size_t n = shape.size();
  auto ad = a.data();
  auto bd = b.data();
  auto av = [&](std::size_t i) { return a_scalar ? ad[0] : ad[i]; };
  auto bv = [&](std::size_t i) { return b_scalar ? bd[0] : bd[i]; };
  Buffer out(n);
  for (std::size_t i = 0; i < n; ++i) {
    switch (op) {
      case ElementwiseOp::Add: out[i] = av(i) + bv(i); break;
      case ElementwiseOp::Sub: out[i] = av(i) - bv(i); break;
      case ElementwiseOp::Mul: out[i] = av(i) * bv(i); break;
    }
  }
  return make_result(op_name(op), shape, std::move(out), {a, b},
                     [a, b, op, n, a_scalar, b_scalar](std::span<const double> g, std::span<const double>) mutable {
                       auto contribute = [n](const Tensor& t, bool is_scalar, auto&& factor) {
                         if (!t.requires_grad()) return;
                         auto dst = t.grad_mut();
                         for (std::size_t i = 0; i < n; ++i) dst[is_scalar ? 0 : i] += factor(i);
                       };
                       auto ad = a.data();
                       auto bd = b.data();
                       switch (op) {
                         case ElementwiseOp::Add:
                           contribute(a, a_scalar, [&](std::size_t i) { return g[i]; });
                           contribute(b, b_scalar, [&](std::size_t i) { return g[i]; });
                           break;
                         case ElementwiseOp::Sub:
                           contribute(a, a_scalar, [&](std::size_t i) { return g[i]; });
                           contribute(b, b_scalar, [&](std::size_t i) { return -g[i]; });
                           break;
                         case ElementwiseOp::Mul:
                           contribute(a, a_scalar, [&](std::size_t i) { return g[i] * bd[b_scalar ? 0 : i]; });
                           contribute(b, b_scalar, [&](std::size_t i) { return g[i] * ad[a_scalar ? 0 : i]; });
                           break;
                       }
                     });
}

Tensor add(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::Add, a, b); }
Tensor sub(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::Sub, a, b); }
Tensor mul(const Tensor& a, const Tensor& b) { return elementwise(ElementwiseOp::Mul, a, b); }

Tensor add_scalar(const Tensor& a, double s) {
  Buffer out(a.data().begin(), a.data().end());
  for (double& v : out) v += s;
  return make_result("add_scalar", a.shape(), std::move(out), {a},
                     [a](std::span<const double> g, std::span<const double>) mutable { accumulate(a, g); });
}

Tensor mul_scalar(const Tensor& a, double s) {
  Buffer out(a.data().begin(), a.data().end());
  for (double& v : out) v *= s;
  return make_result("mul_scalar", a.shape(), std::move(out), {a},
                     [a, s](std::span<const double> g, std::span<const double>) mutable {
                       if (!a.requires_grad()) return;
                       auto dst = a.grad_mut();
                       for (std::size_t i = 0; i < g.size(); ++i) dst[i] += s * g[i];
                     });
}

Tensor pow_int(const Tensor& a, int k) {
  if (k < 0) throw ValueError("pow_int: negative exponent " + std::to_string(k));
  auto ad = a.data();
  Buffer out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) {
    double p = 1.0;
    for (int r = 0; r < k; ++r) p *= ad[i];
    out[i] = p;
  }
  return make_result("pow_int", a.shape(), std::move(out), {a},
                     [a, k](std::span<const double> g, std::span<const double>) mutable {
                       if (!a.requires_grad() || k == 0) return;
                       auto ad = a.data();
                       auto dst = a.grad_mut();
                       for (std::size_t i = 0; i < ad.size(); ++i) {
                         double p = 1.0;
                         for (int r = 0; r < k - 1; ++r) p *= ad[i];
                         dst[i] += g[i] * k * p;
                       }
                     });
}

Tensor clamp_min_zero(const Tensor& a) {
  auto ad = a.data();
  Buffer out(ad.size());
  for (std::size_t i = 0; i < ad.size(); ++i) out[i] = ad[i] > 0.0 ? ad[i] : 0.0;
  return make_result("clamp_min_zero", a.shape(), std::move(out), {a},
                     [a](std::span<const double> g, std::span<const double>) mutable {
                       if (!a.requires_grad()) return;
                       auto ad = a.data();
                       auto dst = a.grad_mut();
                       for (std::size_t i = 0; i < ad.size(); ++i)
                         if (ad[i] > 0.0) dst[i] += g[i];
                     });
}

Tensor add_bias(const Tensor& a, const Tensor& bias) {
  if (bias.rows() != 1 || bias.cols() != a.cols()) {
    throw ShapeError("add_bias: bias " + bias.shape().str() + " does not match " + a.shape().str());
  }
  const std::size_t rows = a.rows(), cols = a.cols();
  Buffer out(a.data().begin(), a.data().end());
  auto bd = bias.data();
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) out[r * cols + c] += bd[c];
  return make_result("add_bias", a.shape(), std::move(out), {a, bias},
                     [a, bias, rows, cols](std::span<const double> g, std::span<const double>) mutable {
                       accumulate(a, g);
                       if (!bias.requires_grad()) return;
                       auto dst = bias.grad_mut();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cols; ++c) dst[c] += g[r * cols + c];
                     });
}

Tensor sum(const Tensor& a) {
  double s = 0.0;
  for (double v : a.data()) s += v;
  return make_result("sum", {1, 1}, Buffer{s}, {a},
                     [a](std::span<const double> g, std::span<const double>) mutable {
                       if (!a.requires_grad()) return;
                       for (double& d : a.grad_mut()) d += g[0];
                     });
}

Tensor mean(const Tensor& a) {
  if (a.size() == 0) throw ShapeError("mean of an empty tensor");
  return mul_scalar(sum(a), 1.0 / static_cast<double>(a.size()));
}

}  // namespace trukan
