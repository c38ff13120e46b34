#pragma once

#include <span>
#include <vector>

#include "trukan/tensor.hpp"

namespace trukan::basis {

// Spline degree k (the "order" hyperparameter), k >= 0.
class SplineOrder {
 public:
  constexpr SplineOrder() = default;
  explicit SplineOrder(int k);
  constexpr int value() const { return k_; }

 private:
  int k_ = 3;
};

// (x - t)_+^k. For k = 0 this is the indicator 1{x >= t}.
double truncated_power(double x, double t, int k);

// Elementwise (x - t)_+^k, differentiable in x.
Tensor truncated_power(const Tensor& x, double t, int k);

// m-th derivative of (x - t)_+^k in x, i.e. k!/(k-m)! (x - t)_+^(k-m).
// At m = k this is k! * 1{x >= t}. Throws ValueError when m > k or m < 0.
double truncated_power_deriv(double x, double t, int k, int m);

// Values of all B_{j,k}, j = 0 .. knots.size()-k-2, at x by the Cox-de Boor
// recursion over half-open knot intervals [t_j, t_{j+1}). Zero outside
// [t_0, t_last). Throws ValueError for too few or decreasing knots.
std::vector<double> bspline_basis(double x, std::span<const double> knots, int k);

// First derivatives of the same basis functions.
std::vector<double> bspline_basis_deriv(double x, std::span<const double> knots, int k);

// Basis matrix with one row per element of x (taken in row-major order) and
// one column per basis function; differentiable in x.
Tensor bspline_eval(const Tensor& x, std::span<const double> knots, int k);

// Horner evaluation of sum_r a_r x^r.
double poly_eval(std::span<const double> coeffs, double x);

// Elementwise polynomial with coefficients a_0..a_k held in `coeffs` (any
// shape, read in order). Differentiable in both coefficients and x.
Tensor poly_eval(const Tensor& coeffs, const Tensor& x);

// m-th derivative sum_{r=m}^{k} r!/(r-m)! a_r x^(r-m); 0 when m exceeds the degree.
double poly_deriv(std::span<const double> coeffs, double x, int m);

double sigmoid(double x);
double silu(double x);
double silu_deriv(double x);
Tensor silu(const Tensor& x);

// Sine features sin(freqs[g] * x[b,i] + phases[i,g]) laid out as
// out[b, i*F + g] for x: batch x in, freqs: 1 x F, phases: in x F.
Tensor sine_basis(const Tensor& x, const Tensor& freqs, const Tensor& phases);

// Spline written as sum_r poly[r] x^r + sum_j coeffs[j] (x - knots[j])_+^k,
// valid on [lo, hi].
struct TruncatedRepresentation {
  int order = 0;
  std::vector<double> knots;
  std::vector<double> coeffs;
  std::vector<double> poly;
  double lo = 0.0;
  double hi = 0.0;
  // Condition number of the column-scaled collocation matrix.
  double condition = 1.0;
  // Max |difference| to the B-spline expansion over the collocation samples.
  double max_residual = 0.0;

  double operator()(double x) const;
};

enum class ConversionDomain {
  // [t_k, t_n]: where the B-spline space is complete (the usual grid range).
  Interior,
  // [t_0, t_last]: the whole support of the expansion.
  Support,
};

// Re-expresses sum_j coeffs_b[j] B_{j,k}(x) in the truncated-power plus
// polynomial basis by least squares on a dense collocation grid. Throws
// NumericError (with the condition estimate) when the system is singular.
TruncatedRepresentation bspline_to_truncated(std::span<const double> coeffs_b, std::span<const double> knots,
                                             int k, ConversionDomain domain = ConversionDomain::Interior,
                                             std::size_t samples_per_interval = 0);

// sum_j coeffs[j] B_{j,k}(x).
double bspline_expansion(std::span<const double> coeffs, std::span<const double> knots, int k, double x);

}  // namespace trukan::basis
