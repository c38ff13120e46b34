#pragma once

#include "trukan/tensor.hpp"

namespace trukan {

// Matrix product; backward gives a_grad = g * b^T and b_grad = a^T * g.
Tensor matmul(const Tensor& a, const Tensor& b);

enum class ElementwiseOp { Add, Sub, Mul };

// Binary elementwise op. Operands must have the same shape, or one of them is
// 1x1 and is broadcast against the other.
Tensor elementwise(ElementwiseOp op, const Tensor& a, const Tensor& b);
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

Tensor add_scalar(const Tensor& a, double s);
Tensor mul_scalar(const Tensor& a, double s);

// x^k for integer k >= 0; throws ValueError for negative k.
Tensor pow_int(const Tensor& a, int k);

// max(x, 0). The subgradient at 0 is 0.
Tensor clamp_min_zero(const Tensor& a);
inline Tensor relu(const Tensor& a) { return clamp_min_zero(a); }

// Adds a 1 x cols row to every row of a.
Tensor add_bias(const Tensor& a, const Tensor& bias);

Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);

inline Tensor operator+(const Tensor& a, const Tensor& b) { return add(a, b); }
inline Tensor operator-(const Tensor& a, const Tensor& b) { return sub(a, b); }
inline Tensor operator*(const Tensor& a, const Tensor& b) { return mul(a, b); }

// Accumulates values into t's gradient when t requires one.
void accumulate(const Tensor& t, std::span<const double> g);

}  // namespace trukan
