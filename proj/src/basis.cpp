#include "trukan/basis.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>

#include "trukan/error.hpp"
#include "trukan/ops.hpp"

namespace trukan::basis {

SplineOrder::SplineOrder(int k) : k_(k) {
  if (k < 0) throw ValueError("spline order must be >= 0, got " + std::to_string(k));
}

namespace {

void check_order(int k) {
  if (k < 0) throw ValueError("spline order must be >= 0, got " + std::to_string(k));
}

double ipow(double x, int k) {
  double p = 1.0;
  for (int r = 0; r < k; ++r) p *= x;
  return p;
}

double falling_factorial(int k, int m) {
  double f = 1.0;
  for (int r = 0; r < m; ++r) f *= static_cast<double>(k - r);
  return f;
}

void validate_knots(std::span<const double> knots, int k) {
  check_order(k);
  if (knots.size() < static_cast<std::size_t>(k) + 2) {
    throw ValueError("insufficient knots: " + std::to_string(knots.size()) + " knots for order " +
                     std::to_string(k) + " (need at least " + std::to_string(k + 2) + ")");
  }
  for (std::size_t i = 0; i + 1 < knots.size(); ++i) {
    if (!(knots[i + 1] >= knots[i])) {
      throw ValueError("knot vector decreases at index " + std::to_string(i + 1));
    }
  }
}

// Cox-de Boor recursion restricted to the k+1 functions that can be non-zero
// at x. `top` receives degree k, `below` degree k-1 (empty for k = 0).
void cox_de_boor(double x, std::span<const double> t, int k, std::vector<double>& top, std::vector<double>& below) {
  const std::size_t m = t.size();
  std::vector<double> level(m - 1, 0.0);
  below.clear();
  if (x >= t.front() && x < t.back()) {
    const auto mu = static_cast<std::size_t>(std::upper_bound(t.begin(), t.end(), x) - t.begin()) - 1;
    level[mu] = 1.0;
    for (int p = 1; p <= k; ++p) {
      std::vector<double> next(m - 1 - static_cast<std::size_t>(p), 0.0);
      const std::size_t first = mu >= static_cast<std::size_t>(p) ? mu - static_cast<std::size_t>(p) : 0;
      const std::size_t last = std::min(mu, next.size() - 1);
      for (std::size_t i = first; i <= last && i < next.size(); ++i) {
        double v = 0.0;
        const double dl = t[i + p] - t[i];
        if (dl > 0.0) v += (x - t[i]) / dl * level[i];
        const double dr = t[i + p + 1] - t[i + 1];
        if (dr > 0.0) v += (t[i + p + 1] - x) / dr * level[i + 1];
        next[i] = v;
      }
      if (p == k) below = level;
      level = std::move(next);
    }
  } else {
    if (k > 0) below.assign(m - static_cast<std::size_t>(k), 0.0);
    level.assign(m - 1 - static_cast<std::size_t>(k), 0.0);
  }
  top = std::move(level);
}

std::vector<double> derivative_from_lower(std::span<const double> t, int k, const std::vector<double>& lower,
                                          std::size_t n) {
  std::vector<double> d(n, 0.0);
  if (k == 0) return d;
  for (std::size_t i = 0; i < n; ++i) {
    double v = 0.0;
    const double dl = t[i + k] - t[i];
    if (dl > 0.0) v += lower[i] / dl;
    const double dr = t[i + k + 1] - t[i + 1];
    if (dr > 0.0) v -= lower[i + 1] / dr;
    d[i] = k * v;
  }
  return d;
}

}  // namespace

double truncated_power(double x, double t, int k) {
  check_order(k);
  if (x < t) return 0.0;
  return ipow(x - t, k);
}

Tensor truncated_power(const Tensor& x, double t, int k) {
  check_order(k);
  auto xd = x.data();
  Buffer out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = xd[i] >= t ? ipow(xd[i] - t, k) : 0.0;
  return make_result("truncated_power", x.shape(), std::move(out), {x},
                     [x, t, k](std::span<const double> g, std::span<const double>) mutable {
                       if (!x.requires_grad() || k == 0) return;
                       auto xd = x.data();
                       auto dst = x.grad_mut();
                       for (std::size_t i = 0; i < xd.size(); ++i)
                         if (xd[i] > t) dst[i] += g[i] * k * ipow(xd[i] - t, k - 1);
                     });
}

double truncated_power_deriv(double x, double t, int k, int m) {
  check_order(k);
  if (m < 0 || m > k) {
    throw ValueError("derivative order m=" + std::to_string(m) + " outside [0, k=" + std::to_string(k) + "]");
  }
  if (x < t) return 0.0;
  return falling_factorial(k, m) * ipow(x - t, k - m);
}

std::vector<double> bspline_basis(double x, std::span<const double> knots, int k) {
  validate_knots(knots, k);
  std::vector<double> top, below;
  cox_de_boor(x, knots, k, top, below);
  return top;
}

std::vector<double> bspline_basis_deriv(double x, std::span<const double> knots, int k) {
  validate_knots(knots, k);
  std::vector<double> top, below;
  cox_de_boor(x, knots, k, top, below);
  return derivative_from_lower(knots, k, below, top.size());
}

Tensor bspline_eval(const Tensor& x, std::span<const double> knots, int k) {
  validate_knots(knots, k);
  const std::size_t n = knots.size() - static_cast<std::size_t>(k) - 1;
  const std::size_t pts = x.size();
  std::vector<double> t(knots.begin(), knots.end());
  Buffer out(pts * n);
  std::vector<double> deriv(pts * n);
  std::vector<double> top, below;
  for (std::size_t p = 0; p < pts; ++p) {
    cox_de_boor(x.data()[p], t, k, top, below);
    std::copy(top.begin(), top.end(), out.begin() + static_cast<std::ptrdiff_t>(p * n));
    auto d = derivative_from_lower(t, k, below, n);
    std::copy(d.begin(), d.end(), deriv.begin() + static_cast<std::ptrdiff_t>(p * n));
  }
  return make_result("bspline_eval", {pts, n}, std::move(out), {x},
                     [x, n, pts, deriv = std::move(deriv)](std::span<const double> g, std::span<const double>) mutable {
                       if (!x.requires_grad()) return;
                       auto dst = x.grad_mut();
                       for (std::size_t p = 0; p < pts; ++p) {
                         double s = 0.0;
                         for (std::size_t j = 0; j < n; ++j) s += g[p * n + j] * deriv[p * n + j];
                         dst[p] += s;
                       }
                     });
}

double poly_eval(std::span<const double> coeffs, double x) {
  if (coeffs.empty()) throw ValueError("poly_eval: empty coefficient list");
  double acc = 0.0;
  for (auto it = coeffs.rbegin(); it != coeffs.rend(); ++it) acc = acc * x + *it;
  return acc;
}

Tensor poly_eval(const Tensor& coeffs, const Tensor& x) {
  if (coeffs.size() == 0) throw ValueError("poly_eval: empty coefficient list");
  auto xd = x.data();
  Buffer out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = poly_eval(coeffs.data(), xd[i]);
  return make_result("poly_eval", x.shape(), std::move(out), {coeffs, x},
                     [coeffs, x](std::span<const double> g, std::span<const double>) mutable {
                       auto xd = x.data();
                       const std::size_t terms = coeffs.size();
                       if (coeffs.requires_grad()) {
                         auto dst = coeffs.grad_mut();
                         for (std::size_t i = 0; i < xd.size(); ++i) {
                           double p = 1.0;
                           for (std::size_t r = 0; r < terms; ++r, p *= xd[i]) dst[r] += g[i] * p;
                         }
                       }
                       if (x.requires_grad()) {
                         auto dst = x.grad_mut();
                         for (std::size_t i = 0; i < xd.size(); ++i) dst[i] += g[i] * poly_deriv(coeffs.data(), xd[i], 1);
                       }
                     });
}

double poly_deriv(std::span<const double> coeffs, double x, int m) {
  if (coeffs.empty()) throw ValueError("poly_deriv: empty coefficient list");
  if (m < 0) throw ValueError("poly_deriv: negative derivative order");
  const int degree = static_cast<int>(coeffs.size()) - 1;
  if (m > degree) return 0.0;
  double acc = 0.0;
  for (int r = degree; r >= m; --r) acc = acc * x + falling_factorial(r, m) * coeffs[static_cast<std::size_t>(r)];
  return acc;
}

double sigmoid(double x) {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

double silu(double x) { return x * sigmoid(x); }

double silu_deriv(double x) {
  const double s = sigmoid(x);
  return s + x * s * (1.0 - s);
}

Tensor silu(const Tensor& x) {
  auto xd = x.data();
  Buffer out(xd.size());
  for (std::size_t i = 0; i < xd.size(); ++i) out[i] = silu(xd[i]);
  return make_result("silu", x.shape(), std::move(out), {x},
                     [x](std::span<const double> g, std::span<const double>) mutable {
                       if (!x.requires_grad()) return;
                       auto xd = x.data();
                       auto dst = x.grad_mut();
                       for (std::size_t i = 0; i < xd.size(); ++i) dst[i] += g[i] * silu_deriv(xd[i]);
                     });
}

Tensor sine_basis(const Tensor& x, const Tensor& freqs, const Tensor& phases) {
  const std::size_t batch = x.rows(), in = x.cols(), f = freqs.size();
  if (f == 0 || freqs.rows() != 1) throw ShapeError("sine_basis: freqs must be 1xF, got " + freqs.shape().str());
  if (phases.rows() != in || phases.cols() != f) {
    throw ShapeError("sine_basis: phases " + phases.shape().str() + " do not match input " + x.shape().str() +
                     " and " + std::to_string(f) + " frequencies");
  }
  auto xd = x.data();
  auto fd = freqs.data();
  auto pd = phases.data();
  Buffer out(batch * in * f);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < in; ++i)
      for (std::size_t q = 0; q < f; ++q) out[(b * in + i) * f + q] = std::sin(fd[q] * xd[b * in + i] + pd[i * f + q]);
  return make_result(
      "sine_basis", {batch, in * f}, std::move(out), {x, freqs, phases},
      [x, freqs, phases, batch, in, f](std::span<const double> g, std::span<const double>) mutable {
        auto xd = x.data();
        auto fd = freqs.data();
        auto pd = phases.data();
        std::span<double> gx, gf, gp;
        if (x.requires_grad()) gx = x.grad_mut();
        if (freqs.requires_grad()) gf = freqs.grad_mut();
        if (phases.requires_grad()) gp = phases.grad_mut();
        for (std::size_t b = 0; b < batch; ++b)
          for (std::size_t i = 0; i < in; ++i) {
            const double xv = xd[b * in + i];
            double sx = 0.0;
            for (std::size_t q = 0; q < f; ++q) {
              const double c = g[(b * in + i) * f + q] * std::cos(fd[q] * xv + pd[i * f + q]);
              sx += c * fd[q];
              if (!gf.empty()) gf[q] += c * xv;
              if (!gp.empty()) gp[i * f + q] += c;
            }
            if (!gx.empty()) gx[b * in + i] += sx;
          }
      });
}

double TruncatedRepresentation::operator()(double x) const {
  double acc = poly_eval(poly, x);
  for (std::size_t j = 0; j < knots.size(); ++j) acc += coeffs[j] * truncated_power(x, knots[j], order);
  return acc;
}

double bspline_expansion(std::span<const double> coeffs, std::span<const double> knots, int k, double x) {
  const auto b = bspline_basis(x, knots, k);
  if (coeffs.size() != b.size()) {
    throw ShapeError("B-spline expansion: " + std::to_string(coeffs.size()) + " coefficients for " +
                     std::to_string(b.size()) + " basis functions");
  }
  double acc = 0.0;
  for (std::size_t j = 0; j < b.size(); ++j) acc += coeffs[j] * b[j];
  return acc;
}

TruncatedRepresentation bspline_to_truncated(std::span<const double> coeffs_b, std::span<const double> knots, int k,
                                             ConversionDomain domain, std::size_t samples_per_interval) {
  validate_knots(knots, k);
  const std::size_t n = knots.size() - static_cast<std::size_t>(k) - 1;
  if (coeffs_b.size() != n) {
    throw ShapeError("bspline_to_truncated: " + std::to_string(coeffs_b.size()) + " coefficients for " +
                     std::to_string(n) + " basis functions");
  }
  TruncatedRepresentation rep;
  rep.order = k;
  if (domain == ConversionDomain::Interior) {
    rep.lo = knots[static_cast<std::size_t>(k)];
    rep.hi = knots[n];
  } else {
    rep.lo = knots.front();
    rep.hi = knots.back();
  }
  if (!(rep.hi > rep.lo)) {
    throw ValueError("bspline_to_truncated: empty conversion domain [" + std::to_string(rep.lo) + ", " +
                     std::to_string(rep.hi) + "]");
  }
  for (std::size_t i = 0; i < knots.size(); ++i) {
    const double v = knots[i];
    if (v <= rep.lo || v >= rep.hi) continue;
    if (!rep.knots.empty() && rep.knots.back() == v) {
      throw ValueError("bspline_to_truncated: repeated interior knot " + std::to_string(v) +
                       " needs lower-degree truncated terms, which are not supported");
    }
    rep.knots.push_back(v);
  }

  const std::size_t per = samples_per_interval != 0 ? samples_per_interval : 2 * (static_cast<std::size_t>(k) + 2);
  std::vector<double> edges{rep.lo};
  edges.insert(edges.end(), rep.knots.begin(), rep.knots.end());
  edges.push_back(rep.hi);
  std::vector<double> xs;
  for (std::size_t s = 0; s + 1 < edges.size(); ++s) {
    const double a = edges[s], b = edges[s + 1];
    for (std::size_t q = 0; q < per; ++q) {
      // Chebyshev-Gauss nodes avoid the breakpoints themselves.
      const double c = std::cos(std::numbers::pi * (2.0 * static_cast<double>(q) + 1.0) / (2.0 * static_cast<double>(per)));
      xs.push_back(0.5 * (a + b) + 0.5 * (b - a) * c);
    }
  }

  const std::size_t poly_terms = static_cast<std::size_t>(k) + 1;
  const std::size_t cols = poly_terms + rep.knots.size();
  Eigen::MatrixXd a(static_cast<Eigen::Index>(xs.size()), static_cast<Eigen::Index>(cols));
  Eigen::VectorXd y(static_cast<Eigen::Index>(xs.size()));
  for (std::size_t r = 0; r < xs.size(); ++r) {
    const auto row = static_cast<Eigen::Index>(r);
    double p = 1.0;
    for (std::size_t c = 0; c < poly_terms; ++c, p *= xs[r]) a(row, static_cast<Eigen::Index>(c)) = p;
    for (std::size_t j = 0; j < rep.knots.size(); ++j)
      a(row, static_cast<Eigen::Index>(poly_terms + j)) = truncated_power(xs[r], rep.knots[j], k);
    y(row) = bspline_expansion(coeffs_b, knots, k, xs[r]);
  }
  Eigen::VectorXd scale = a.colwise().norm().transpose();
  for (Eigen::Index c = 0; c < scale.size(); ++c) {
    if (scale(c) == 0.0) scale(c) = 1.0;
    a.col(c) /= scale(c);
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(a, Eigen::ComputeThinU | Eigen::ComputeThinV);
  const auto& sv = svd.singularValues();
  const double smin = sv(sv.size() - 1);
  rep.condition = smin > 0.0 ? sv(0) / smin : std::numeric_limits<double>::infinity();
  if (!(rep.condition < 1e13)) {
    std::ostringstream msg;
    msg << "bspline_to_truncated: singular collocation system (condition estimate " << rep.condition << ")";
    throw NumericError(msg.str());
  }
  Eigen::VectorXd sol = svd.solve(y);
  rep.poly.resize(poly_terms);
  rep.coeffs.resize(rep.knots.size());
  for (std::size_t c = 0; c < poly_terms; ++c)
    rep.poly[c] = sol(static_cast<Eigen::Index>(c)) / scale(static_cast<Eigen::Index>(c));
  for (std::size_t j = 0; j < rep.knots.size(); ++j)
    rep.coeffs[j] = sol(static_cast<Eigen::Index>(poly_terms + j)) / scale(static_cast<Eigen::Index>(poly_terms + j));
  for (std::size_t r = 0; r < xs.size(); ++r)
    rep.max_residual = std::max(rep.max_residual, std::abs(rep(xs[r]) - y(static_cast<Eigen::Index>(r))));
  return rep;
}

}  // namespace trukan::basis
