#include "trukan/layers.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "trukan/error.hpp"
#include "trukan/ops.hpp"

namespace trukan::nn {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

double ipow(double x, int k) {
  double p = 1.0;
  for (int r = 0; r < k; ++r) p *= x;
  return p;
}

Tensor normal_tensor(std::size_t rows, std::size_t cols, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Buffer data(rows * cols);
  for (double& v : data) v = dist(rng);
  return Tensor::adopt({rows, cols}, std::move(data), true);
}

Tensor uniform_tensor(std::size_t rows, std::size_t cols, double bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> dist(-bound, bound);
  Buffer data(rows * cols);
  for (double& v : data) v = dist(rng);
  return Tensor::adopt({rows, cols}, std::move(data), true);
}

Tensor deep(const Tensor& t) { return t.defined() ? t.clone() : Tensor(); }

void check_positive(std::size_t v, const char* what) {
  if (v == 0) throw ValueError(std::string(what) + " must be positive");
}

}  // namespace

const char* to_string(Role role) {
  switch (role) {
    case Role::SplineCoeff: return "spline_coeff";
    case Role::PolyCoeff: return "poly_coeff";
    case Role::Knot: return "knot";
    case Role::BaseWeight: return "base_weight";
    case Role::Scale: return "scale";
    case Role::Weight: return "weight";
    case Role::Bias: return "bias";
    case Role::NormAffine: return "norm_affine";
    case Role::Amplitude: return "amplitude";
    case Role::Frequency: return "frequency";
  }
  return "?";
}

// ---------------------------------------------------------------------------
// Layer / EdgeLayer

std::size_t Layer::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : parameters()) n += p.tensor.size();
  return n;
}

void Layer::check_input(const Tensor& x) const {
  if (x.cols() != in_dim()) {
    throw ShapeError(kind() + ": expected " + std::to_string(in_dim()) + " input columns, got " + x.shape().str());
  }
}

std::vector<double> EdgeLayer::edge_values(std::size_t in, std::size_t out, std::span<const double> xs) const {
  auto parts = edge_components(in, out, xs);
  std::vector<double> total(xs.size(), 0.0);
  for (const auto& row : parts.values)
    for (std::size_t s = 0; s < xs.size(); ++s) total[s] += row[s];
  return total;
}

std::size_t EdgeLayer::active_edges() const {
  if (mask_.empty()) return in_dim() * out_dim();
  return static_cast<std::size_t>(std::count(mask_.begin(), mask_.end(), true));
}

void EdgeLayer::remove_edge(std::size_t in, std::size_t out) {
  if (in >= in_dim() || out >= out_dim()) throw ValueError("remove_edge: edge index out of range");
  if (mask_.empty()) mask_.assign(in_dim() * out_dim(), true);
  mask_[in * out_dim() + out] = false;
  zero_edge(in, out);
}

void EdgeLayer::enforce_mask() {
  if (mask_.empty()) return;
  for (std::size_t i = 0; i < in_dim(); ++i)
    for (std::size_t o = 0; o < out_dim(); ++o)
      if (!mask_[i * out_dim() + o]) zero_edge(i, o);
}

void EdgeLayer::set_mask(std::vector<bool> mask) {
  if (!mask.empty() && mask.size() != in_dim() * out_dim()) throw ShapeError("edge mask size mismatch");
  mask_ = std::move(mask);
  enforce_mask();
}

std::size_t EdgeLayer::parameter_count() const {
  const std::size_t removed = in_dim() * out_dim() - active_edges();
  return Layer::parameter_count() - removed * parameters_per_edge();
}

// ---------------------------------------------------------------------------
// Basis feature ops

Tensor truncated_features(const Tensor& x, const Tensor& knots, int k) {
  const std::size_t batch = x.rows(), in = x.cols(), g = knots.size();
  auto xd = x.data();
  auto td = knots.data();
  Buffer out(batch * in * g);
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t i = 0; i < in; ++i) {
      const double xv = xd[b * in + i];
      double* row = out.data() + (b * in + i) * g;
      for (std::size_t j = 0; j < g; ++j) {
        const double d = xv - td[j];
        row[j] = d >= 0.0 ? ipow(d, k) : 0.0;
      }
    }
  return make_result("truncated_features", {batch, in * g}, std::move(out), {x, knots},
                     [x, knots, k, batch, in, g](std::span<const double> grad, std::span<const double>) mutable {
                       if (k == 0) return;
                       auto xd = x.data();
                       auto td = knots.data();
                       std::span<double> gx, gt;
                       if (x.requires_grad()) gx = x.grad_mut();
                       if (knots.requires_grad()) gt = knots.grad_mut();
                       for (std::size_t b = 0; b < batch; ++b)
                         for (std::size_t i = 0; i < in; ++i) {
                           const double xv = xd[b * in + i];
                           const double* gr = grad.data() + (b * in + i) * g;
                           double sx = 0.0;
                           for (std::size_t j = 0; j < g; ++j) {
                             const double d = xv - td[j];
                             if (d <= 0.0) continue;
                             const double v = gr[j] * k * ipow(d, k - 1);
                             sx += v;
                             if (!gt.empty()) gt[j] -= v;
                           }
                           if (!gx.empty()) gx[b * in + i] += sx;
                         }
                     });
}

Tensor power_features(const Tensor& x, int k) {
  const std::size_t batch = x.rows(), in = x.cols(), terms = static_cast<std::size_t>(k) + 1;
  auto xd = x.data();
  Buffer out(batch * in * terms);
  for (std::size_t e = 0; e < batch * in; ++e) {
    double p = 1.0;
    for (std::size_t r = 0; r < terms; ++r, p *= xd[e]) out[e * terms + r] = p;
  }
  return make_result("power_features", {batch, in * terms}, std::move(out), {x},
                     [x, terms](std::span<const double> grad, std::span<const double> val) mutable {
                       if (!x.requires_grad()) return;
                       auto dst = x.grad_mut();
                       for (std::size_t e = 0; e < dst.size(); ++e) {
                         double s = 0.0;
                         for (std::size_t r = 1; r < terms; ++r)
                           s += grad[e * terms + r] * static_cast<double>(r) * val[e * terms + r - 1];
                         dst[e] += s;
                       }
                     });
}

Tensor bspline_features(const Tensor& x, std::span<const double> grid, int k) {
  if (grid.size() < static_cast<std::size_t>(k) + 2) throw ValueError("bspline_features: grid too short");
  const std::size_t batch = x.rows(), in = x.cols();
  const std::size_t m = grid.size();
  const std::size_t n = m - 1 - static_cast<std::size_t>(k);
  const std::size_t nb = k > 0 ? n + 1 : 0;  // functions of degree k-1
  std::vector<double> t(grid.begin(), grid.end());
  auto xd = x.data();
  Buffer out(batch * in * n);
  Buffer lower(batch * in * nb);
  std::vector<double> level(m - 1);
  for (std::size_t e = 0; e < batch * in; ++e) {
    const double xv = xd[e];
    for (std::size_t j = 0; j + 1 < m; ++j) level[j] = (xv >= t[j] && xv < t[j + 1]) ? 1.0 : 0.0;
    for (int p = 1; p <= k; ++p) {
      if (p == k) std::copy_n(level.begin(), nb, lower.begin() + static_cast<std::ptrdiff_t>(e * nb));
      const std::size_t cnt = m - 1 - static_cast<std::size_t>(p);
      for (std::size_t j = 0; j < cnt; ++j) {
        const double left = (xv - t[j]) / (t[j + p] - t[j]);
        const double right = (t[j + p + 1] - xv) / (t[j + p + 1] - t[j + 1]);
        level[j] = left * level[j] + right * level[j + 1];
      }
    }
    std::copy_n(level.begin(), n, out.begin() + static_cast<std::ptrdiff_t>(e * n));
  }
  return make_result(
      "bspline_features", {batch, in * n}, std::move(out), {x},
      [x, t = std::move(t), lower = std::move(lower), k, n, nb](std::span<const double> grad,
                                                               std::span<const double>) mutable {
        if (!x.requires_grad() || k == 0) return;
        auto dst = x.grad_mut();
        for (std::size_t e = 0; e < dst.size(); ++e) {
          const double* lo = lower.data() + e * nb;
          const double* gr = grad.data() + e * n;
          double s = 0.0;
          for (std::size_t j = 0; j < n; ++j) {
            const double d = lo[j] / (t[j + k] - t[j]) - lo[j + 1] / (t[j + k + 1] - t[j + 1]);
            s += gr[j] * k * d;
          }
          dst[e] += s;
        }
      });
}

// ---------------------------------------------------------------------------
// TruKAN

TruKANLayer::TruKANLayer(const TruKANConfig& config) : cfg_(config) {
  check_positive(cfg_.in, "TruKAN in_dim");
  check_positive(cfg_.out, "TruKAN out_dim");
  check_positive(cfg_.grid, "TruKAN grid size");
  const std::size_t sets = cfg_.sharing == basis::KnotSharing::Shared ? 1 : cfg_.out;
  for (std::size_t s = 0; s < sets; ++s) {
    knots_.push_back(cfg_.knot_mode == basis::KnotMode::Fixed ? basis::KnotSet::fixed(cfg_.lo, cfg_.hi, cfg_.grid)
                                                               : basis::KnotSet::learnable(cfg_.lo, cfg_.hi, cfg_.grid));
  }
  std::mt19937_64 rng(cfg_.seed);
  const int k = order();
  const std::size_t terms = static_cast<std::size_t>(k) + 1;
  coeffs_ = normal_tensor(cfg_.in * cfg_.grid, cfg_.out,
                          0.1 / std::sqrt(static_cast<double>(cfg_.in * cfg_.grid)), rng);
  poly_ = Tensor::zeros(cfg_.in * terms, cfg_.out, true);
  if (k >= 1) {
    const double pass = 1.0 / std::sqrt(static_cast<double>(cfg_.in));
    auto a = poly_.data_mut();
    for (std::size_t i = 0; i < cfg_.in; ++i)
      for (std::size_t o = 0; o < cfg_.out; ++o) a[(i * terms + 1) * cfg_.out + o] = pass;
  }
}

std::vector<double> TruKANLayer::knots_for(std::size_t out) const {
  return knots_[knots_.size() == 1 ? 0 : out].values();
}

void TruKANLayer::set_silu_residual(Tensor weights) {
  if (weights.defined() && (weights.rows() != cfg_.in || weights.cols() != cfg_.out)) {
    throw ShapeError("silu residual must be in x out, got " + weights.shape().str());
  }
  if (weights.defined()) weights.set_requires_grad(false);
  silu_residual_ = std::move(weights);
}

std::vector<Parameter> TruKANLayer::parameters() const {
  std::vector<Parameter> ps{{"coeffs", Role::SplineCoeff, coeffs_}, {"poly", Role::PolyCoeff, poly_}};
  for (std::size_t s = 0; s < knots_.size(); ++s)
    if (knots_[s].mode() == basis::KnotMode::Learnable && knots_[s].raw().defined())
      ps.push_back({"knots." + std::to_string(s), Role::Knot, knots_[s].raw()});
  return ps;
}

std::vector<Parameter> TruKANLayer::buffers() const {
  if (!silu_residual_.defined()) return {};
  return {{"silu_residual", Role::BaseWeight, silu_residual_}};
}

std::unique_ptr<Layer> TruKANLayer::clone() const {
  auto copy = std::make_unique<TruKANLayer>(*this);
  copy->coeffs_ = deep(coeffs_);
  copy->poly_ = deep(poly_);
  copy->silu_residual_ = deep(silu_residual_);
  for (auto& ks : copy->knots_)
    if (ks.raw().defined()) ks.raw() = ks.raw().clone();
  return copy;
}

std::size_t TruKANLayer::parameters_per_edge() const {
  return cfg_.grid + static_cast<std::size_t>(order()) + 1;
}

void TruKANLayer::zero_edge(std::size_t in, std::size_t out) {
  const std::size_t g = cfg_.grid, terms = static_cast<std::size_t>(order()) + 1;
  auto c = coeffs_.data_mut();
  for (std::size_t j = 0; j < g; ++j) c[(in * g + j) * cfg_.out + out] = 0.0;
  auto a = poly_.data_mut();
  for (std::size_t r = 0; r < terms; ++r) a[(in * terms + r) * cfg_.out + out] = 0.0;
  if (silu_residual_.defined()) silu_residual_.data_mut()[in * cfg_.out + out] = 0.0;
}

EdgeLayer::Components TruKANLayer::edge_components(std::size_t in, std::size_t out,
                                                   std::span<const double> xs) const {
  const std::size_t g = cfg_.grid, terms = static_cast<std::size_t>(order()) + 1;
  const int k = order();
  const auto t = knots_for(out);
  auto c = coeffs_.data();
  auto a = poly_.data();
  Components parts;
  parts.names = {"poly", "trunc"};
  parts.values.assign(2, std::vector<double>(xs.size(), 0.0));
  std::vector<double> poly(terms);
  for (std::size_t r = 0; r < terms; ++r) poly[r] = a[(in * terms + r) * cfg_.out + out];
  for (std::size_t s = 0; s < xs.size(); ++s) {
    parts.values[0][s] = basis::poly_eval(poly, xs[s]);
    double acc = 0.0;
    for (std::size_t j = 0; j < g; ++j) acc += c[(in * g + j) * cfg_.out + out] * basis::truncated_power(xs[s], t[j], k);
    parts.values[1][s] = acc;
  }
  if (silu_residual_.defined()) {
    parts.names.push_back("silu_residual");
    std::vector<double> row(xs.size());
    const double w = silu_residual_.data()[in * cfg_.out + out];
    for (std::size_t s = 0; s < xs.size(); ++s) row[s] = w * basis::silu(xs[s]);
    parts.values.push_back(std::move(row));
  }
  return parts;
}

Tensor TruKANLayer::forward(const Tensor& x, const ForwardContext&) const {
  check_input(x);
  const int k = order();
  const Tensor input = cfg_.pre_norm ? layer_norm(x, Tensor(), Tensor(), 1e-5) : x;
  Tensor y = matmul(power_features(input, k), poly_);
  if (cfg_.sharing == basis::KnotSharing::Shared) {
    y = add(y, matmul(truncated_features(input, knots_[0].materialize(), k), coeffs_));
  } else {
    std::vector<Tensor> knots;
    knots.reserve(knots_.size());
    for (const auto& ks : knots_) knots.push_back(ks.materialize());
    y = add(y, forward_individual(input, knots));
  }
  if (silu_residual_.defined()) y = add(y, matmul(basis::silu(input), silu_residual_));
  return y;
}

Tensor TruKANLayer::forward_individual(const Tensor& x, const std::vector<Tensor>& knots) const {
  const std::size_t batch = x.rows(), in = cfg_.in, out = cfg_.out, g = cfg_.grid;
  const std::size_t width = in * g;
  const int k = order();
  const std::size_t per_output = std::max<std::size_t>(1, batch * width * sizeof(double));
  const std::size_t chunk = std::clamp<std::size_t>(cfg_.individual_chunk_bytes / per_output, 1, out);

  // Each output owns its knots, so each needs its own basis tensor
  // (batch x in*G); they are built `chunk` outputs at a time.
  auto fill = [x, batch, in, g, k](const double* t, double* basis, double* deriv) {
    auto xd = x.data();
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < in; ++i) {
        const double xv = xd[b * in + i];
        double* row = basis + (b * in + i) * g;
        double* drow = deriv ? deriv + (b * in + i) * g : nullptr;
        for (std::size_t j = 0; j < g; ++j) {
          const double d = xv - t[j];
          if (d > 0.0) {
            const double p = ipow(d, k - 1 > 0 ? k - 1 : 0);
            row[j] = k == 0 ? 1.0 : p * d;
            if (drow) drow[j] = k == 0 ? 0.0 : k * p;
          } else {
            row[j] = (k == 0 && d == 0.0) ? 1.0 : 0.0;
            if (drow) drow[j] = 0.0;
          }
        }
      }
  };

  Buffer y(batch * out, 0.0);
  {
    Buffer basis(chunk * batch * width);
    auto cd = coeffs_.data();
    for (std::size_t o0 = 0; o0 < out; o0 += chunk) {
      const std::size_t o1 = std::min(out, o0 + chunk);
      for (std::size_t o = o0; o < o1; ++o) fill(knots[o].data().data(), basis.data() + (o - o0) * batch * width, nullptr);
      for (std::size_t o = o0; o < o1; ++o) {
        Eigen::Map<const RowMat> f(basis.data() + (o - o0) * batch * width, static_cast<Eigen::Index>(batch),
                                   static_cast<Eigen::Index>(width));
        Eigen::Map<const Eigen::VectorXd, 0, Eigen::InnerStride<>> c(cd.data() + o, static_cast<Eigen::Index>(width),
                                                                      Eigen::InnerStride<>(static_cast<Eigen::Index>(out)));
        Eigen::VectorXd col = f * c;
        for (std::size_t b = 0; b < batch; ++b) y[b * out + o] = col(static_cast<Eigen::Index>(b));
      }
    }
  }

  std::vector<Tensor> inputs{x, coeffs_};
  inputs.insert(inputs.end(), knots.begin(), knots.end());
  return make_result(
      "trukan_individual", {batch, out}, std::move(y), inputs,
      [x, coeffs = coeffs_, knots, fill, batch, in, out, g, width, chunk](std::span<const double> grad,
                                                                          std::span<const double>) mutable {
        Buffer basis(chunk * batch * width);
        Buffer deriv(chunk * batch * width);
        auto cd = coeffs.data();
        std::span<double> gx, gc;
        if (x.requires_grad()) gx = x.grad_mut();
        if (coeffs.requires_grad()) gc = coeffs.grad_mut();
        for (std::size_t o0 = 0; o0 < out; o0 += chunk) {
          const std::size_t o1 = std::min(out, o0 + chunk);
          for (std::size_t o = o0; o < o1; ++o) {
            double* f = basis.data() + (o - o0) * batch * width;
            double* d = deriv.data() + (o - o0) * batch * width;
            fill(knots[o].data().data(), f, d);
            std::span<double> gt;
            if (knots[o].requires_grad()) gt = knots[o].grad_mut();
            for (std::size_t b = 0; b < batch; ++b) {
              const double go = grad[b * out + o];
              if (go == 0.0) continue;
              for (std::size_t i = 0; i < in; ++i) {
                const double* frow = f + (b * in + i) * g;
                const double* drow = d + (b * in + i) * g;
                double sx = 0.0;
                for (std::size_t j = 0; j < g; ++j) {
                  const double cij = cd[(i * g + j) * out + o];
                  if (!gc.empty()) gc[(i * g + j) * out + o] += go * frow[j];
                  const double v = go * cij * drow[j];
                  sx += v;
                  if (!gt.empty()) gt[j] -= v;
                }
                if (!gx.empty()) gx[b * in + i] += sx;
              }
            }
          }
        }
      });
}

// ---------------------------------------------------------------------------
// KAN

KANLayer::KANLayer(const KANConfig& config) : cfg_(config) {
  check_positive(cfg_.in, "KAN in_dim");
  check_positive(cfg_.out, "KAN out_dim");
  check_positive(cfg_.grid, "KAN grid size");
  if (!(cfg_.hi > cfg_.lo)) throw ValueError("KAN grid range must satisfy lo < hi");
  const int k = cfg_.order.value();
  const double h = (cfg_.hi - cfg_.lo) / static_cast<double>(cfg_.grid);
  for (int i = -k; i <= static_cast<int>(cfg_.grid) + k; ++i) grid_.push_back(cfg_.lo + i * h);
  std::mt19937_64 rng(cfg_.seed);
  const std::size_t n = basis_count();
  coeffs_ = normal_tensor(cfg_.in * n, cfg_.out, 0.1, rng);
  const double inv_sqrt_in = 1.0 / std::sqrt(static_cast<double>(cfg_.in));
  if (cfg_.scale_mode == KanScaleMode::Trainable) {
    base_weight_ = uniform_tensor(cfg_.in, cfg_.out, inv_sqrt_in, rng);
    spline_scale_ = Tensor::full(cfg_.in, cfg_.out, inv_sqrt_in, true);
  } else {
    base_weight_ = uniform_tensor(cfg_.in, cfg_.out, 1.0, rng);
  }
}

double KANLayer::fixed_scale() const { return 1.0 / std::sqrt(static_cast<double>(cfg_.in)); }

double KANLayer::effective_base_scale(std::size_t in, std::size_t out) const {
  const double w = base_weight_.data()[in * cfg_.out + out];
  return cfg_.scale_mode == KanScaleMode::Trainable ? w : w * fixed_scale();
}

double KANLayer::effective_spline_scale(std::size_t in, std::size_t out) const {
  return cfg_.scale_mode == KanScaleMode::Trainable ? spline_scale_.data()[in * cfg_.out + out] : fixed_scale();
}

std::vector<Parameter> KANLayer::parameters() const {
  std::vector<Parameter> ps{{"coeffs", Role::SplineCoeff, coeffs_}, {"base_weight", Role::BaseWeight, base_weight_}};
  if (spline_scale_.defined()) ps.push_back({"spline_scale", Role::Scale, spline_scale_});
  return ps;
}

std::unique_ptr<Layer> KANLayer::clone() const {
  auto copy = std::make_unique<KANLayer>(*this);
  copy->coeffs_ = deep(coeffs_);
  copy->base_weight_ = deep(base_weight_);
  copy->spline_scale_ = deep(spline_scale_);
  return copy;
}

std::size_t KANLayer::parameters_per_edge() const {
  return basis_count() + (cfg_.scale_mode == KanScaleMode::Trainable ? 2 : 1);
}

void KANLayer::zero_edge(std::size_t in, std::size_t out) {
  const std::size_t n = basis_count();
  auto c = coeffs_.data_mut();
  for (std::size_t j = 0; j < n; ++j) c[(in * n + j) * cfg_.out + out] = 0.0;
  base_weight_.data_mut()[in * cfg_.out + out] = 0.0;
  if (spline_scale_.defined()) spline_scale_.data_mut()[in * cfg_.out + out] = 0.0;
}

EdgeLayer::Components KANLayer::edge_components(std::size_t in, std::size_t out, std::span<const double> xs) const {
  const std::size_t n = basis_count();
  const int k = cfg_.order.value();
  std::vector<double> c(n);
  for (std::size_t j = 0; j < n; ++j) c[j] = coeffs_.data()[(in * n + j) * cfg_.out + out];
  const double sb = effective_base_scale(in, out), ss = effective_spline_scale(in, out);
  Components parts;
  parts.names = {"base", "spline"};
  parts.values.assign(2, std::vector<double>(xs.size(), 0.0));
  for (std::size_t s = 0; s < xs.size(); ++s) {
    parts.values[0][s] = sb * basis::silu(xs[s]);
    parts.values[1][s] = ss * basis::bspline_expansion(c, grid_, k, xs[s]);
  }
  return parts;
}

namespace {

// C_eff[i*n + j, o] = c[i*n + j, o] * s[i, o].
Tensor scale_edge_blocks(const Tensor& coeffs, const Tensor& scale, std::size_t n) {
  const std::size_t in = scale.rows(), out = scale.cols();
  auto cd = coeffs.data();
  auto sd = scale.data();
  Buffer res(cd.size());
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t j = 0; j < n; ++j)
      for (std::size_t o = 0; o < out; ++o) res[(i * n + j) * out + o] = cd[(i * n + j) * out + o] * sd[i * out + o];
  return make_result("scale_edge_blocks", coeffs.shape(), std::move(res), {coeffs, scale},
                     [coeffs, scale, n, in, out](std::span<const double> g, std::span<const double>) mutable {
                       auto cd = coeffs.data();
                       auto sd = scale.data();
                       std::span<double> gc, gs;
                       if (coeffs.requires_grad()) gc = coeffs.grad_mut();
                       if (scale.requires_grad()) gs = scale.grad_mut();
                       for (std::size_t i = 0; i < in; ++i)
                         for (std::size_t j = 0; j < n; ++j)
                           for (std::size_t o = 0; o < out; ++o) {
                             const std::size_t e = (i * n + j) * out + o;
                             if (!gc.empty()) gc[e] += g[e] * sd[i * out + o];
                             if (!gs.empty()) gs[i * out + o] += g[e] * cd[e];
                           }
                     });
}

}  // namespace

Tensor KANLayer::forward(const Tensor& x, const ForwardContext&) const {
  check_input(x);
  const int k = cfg_.order.value();
  const Tensor features = bspline_features(x, grid_, k);
  Tensor spline_w, base_w;
  if (cfg_.scale_mode == KanScaleMode::Trainable) {
    spline_w = scale_edge_blocks(coeffs_, spline_scale_, basis_count());
    base_w = base_weight_;
  } else {
    spline_w = mul_scalar(coeffs_, fixed_scale());
    base_w = mul_scalar(base_weight_, fixed_scale());
  }
  return add(matmul(features, spline_w), matmul(basis::silu(x), base_w));
}

// ---------------------------------------------------------------------------
// SineKAN

SineKANLayer::SineKANLayer(const SineKANConfig& config) : cfg_(config) {
  check_positive(cfg_.in, "SineKAN in_dim");
  check_positive(cfg_.out, "SineKAN out_dim");
  check_positive(cfg_.grid, "SineKAN grid size");
  const std::size_t f = cfg_.grid;
  std::mt19937_64 rng(cfg_.seed);
  amplitudes_ = normal_tensor(cfg_.in * f, cfg_.out, 1.0 / std::sqrt(static_cast<double>(cfg_.in * f)), rng);
  Buffer w(f);
  for (std::size_t q = 0; q < f; ++q) w[q] = static_cast<double>(q + 1);
  freqs_ = Tensor::adopt({1, f}, std::move(w), true);
  Buffer ph(cfg_.in * f);
  for (std::size_t i = 0; i < cfg_.in; ++i)
    for (std::size_t q = 0; q < f; ++q)
      ph[i * f + q] = std::numbers::pi * static_cast<double>(i) / static_cast<double>(std::max<std::size_t>(cfg_.in, 2) - 1) +
                      static_cast<double>(q + 1) / static_cast<double>(f + 1);
  phases_ = Tensor::adopt({cfg_.in, f}, std::move(ph));
  bias_ = Tensor::zeros(1, cfg_.out, true);
}

std::vector<Parameter> SineKANLayer::parameters() const {
  return {{"amplitudes", Role::Amplitude, amplitudes_}, {"freqs", Role::Frequency, freqs_}, {"bias", Role::Bias, bias_}};
}

std::vector<Parameter> SineKANLayer::buffers() const { return {{"phases", Role::Frequency, phases_}}; }

std::unique_ptr<Layer> SineKANLayer::clone() const {
  auto copy = std::make_unique<SineKANLayer>(*this);
  copy->amplitudes_ = deep(amplitudes_);
  copy->freqs_ = deep(freqs_);
  copy->phases_ = deep(phases_);
  copy->bias_ = deep(bias_);
  return copy;
}

void SineKANLayer::zero_edge(std::size_t in, std::size_t out) {
  auto a = amplitudes_.data_mut();
  for (std::size_t q = 0; q < cfg_.grid; ++q) a[(in * cfg_.grid + q) * cfg_.out + out] = 0.0;
}

EdgeLayer::Components SineKANLayer::edge_components(std::size_t in, std::size_t out,
                                                    std::span<const double> xs) const {
  Components parts;
  parts.names = {"sine"};
  parts.values.assign(1, std::vector<double>(xs.size(), 0.0));
  const std::size_t f = cfg_.grid;
  for (std::size_t s = 0; s < xs.size(); ++s) {
    double acc = 0.0;
    for (std::size_t q = 0; q < f; ++q)
      acc += amplitudes_.data()[(in * f + q) * cfg_.out + out] *
             std::sin(freqs_.data()[q] * xs[s] + phases_.data()[in * f + q]);
    parts.values[0][s] = acc;
  }
  return parts;
}

Tensor SineKANLayer::forward(const Tensor& x, const ForwardContext&) const {
  check_input(x);
  return add_bias(matmul(basis::sine_basis(x, freqs_, phases_), amplitudes_), bias_);
}

// ---------------------------------------------------------------------------
// Dense and friends

DenseLayer::DenseLayer(std::size_t in, std::size_t out, bool bias, std::uint64_t seed) {
  check_positive(in, "dense in_dim");
  check_positive(out, "dense out_dim");
  std::mt19937_64 rng(seed);
  const double bound = 1.0 / std::sqrt(static_cast<double>(in));
  weight_ = uniform_tensor(in, out, bound, rng);
  if (bias) bias_ = uniform_tensor(1, out, bound, rng);
}

Tensor DenseLayer::forward(const Tensor& x, const ForwardContext&) const {
  check_input(x);
  Tensor y = matmul(x, weight_);
  return bias_.defined() ? add_bias(y, bias_) : y;
}

std::vector<Parameter> DenseLayer::parameters() const {
  std::vector<Parameter> ps{{"weight", Role::Weight, weight_}};
  if (bias_.defined()) ps.push_back({"bias", Role::Bias, bias_});
  return ps;
}

std::unique_ptr<Layer> DenseLayer::clone() const {
  auto copy = std::make_unique<DenseLayer>(*this);
  copy->weight_ = deep(weight_);
  copy->bias_ = deep(bias_);
  return copy;
}

Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (gamma.defined() && gamma.size() != cols) throw ShapeError("layer_norm: gamma does not match feature count");
  auto xd = x.data();
  Buffer xhat(rows * cols);
  std::vector<double> inv_std(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = xd.data() + r * cols;
    double mu = 0.0;
    for (std::size_t c = 0; c < cols; ++c) mu += row[c];
    mu /= static_cast<double>(cols);
    double var = 0.0;
    for (std::size_t c = 0; c < cols; ++c) var += (row[c] - mu) * (row[c] - mu);
    var /= static_cast<double>(cols);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t c = 0; c < cols; ++c) xhat[r * cols + c] = (row[c] - mu) * inv_std[r];
  }
  Buffer out(xhat);
  if (gamma.defined()) {
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t c = 0; c < cols; ++c)
        out[r * cols + c] = out[r * cols + c] * gamma.data()[c] + (beta.defined() ? beta.data()[c] : 0.0);
  }
  std::vector<Tensor> inputs{x};
  if (gamma.defined()) inputs.push_back(gamma);
  if (beta.defined()) inputs.push_back(beta);
  return make_result(
      "layer_norm", x.shape(), std::move(out), inputs,
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, cols](
          std::span<const double> g, std::span<const double>) mutable {
        std::vector<double> dxhat(cols);
        std::span<double> gx, gg, gb;
        if (x.requires_grad()) gx = x.grad_mut();
        if (gamma.defined() && gamma.requires_grad()) gg = gamma.grad_mut();
        if (beta.defined() && beta.requires_grad()) gb = beta.grad_mut();
        for (std::size_t r = 0; r < rows; ++r) {
          double m1 = 0.0, m2 = 0.0;
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t e = r * cols + c;
            if (!gg.empty()) gg[c] += g[e] * xhat[e];
            if (!gb.empty()) gb[c] += g[e];
            dxhat[c] = g[e] * (gamma.defined() ? gamma.data()[c] : 1.0);
            m1 += dxhat[c];
            m2 += dxhat[c] * xhat[e];
          }
          if (gx.empty()) continue;
          m1 /= static_cast<double>(cols);
          m2 /= static_cast<double>(cols);
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t e = r * cols + c;
            gx[e] += inv_std[r] * (dxhat[c] - m1 - xhat[e] * m2);
          }
        }
      });
}

Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        std::vector<double>* batch_mean, std::vector<double>* batch_var) {
  const std::size_t rows = x.rows(), cols = x.cols();
  if (rows < 2) throw ValueError("batch_norm: training mode needs more than one row per batch");
  auto xd = x.data();
  std::vector<double> mu(cols, 0.0), var(cols, 0.0), inv_std(cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) mu[c] += xd[r * cols + c];
  for (double& m : mu) m /= static_cast<double>(rows);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) var[c] += (xd[r * cols + c] - mu[c]) * (xd[r * cols + c] - mu[c]);
  for (double& v : var) v /= static_cast<double>(rows);
  for (std::size_t c = 0; c < cols; ++c) inv_std[c] = 1.0 / std::sqrt(var[c] + eps);
  Buffer xhat(rows * cols), out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t e = r * cols + c;
      xhat[e] = (xd[e] - mu[c]) * inv_std[c];
      out[e] = gamma.defined() ? xhat[e] * gamma.data()[c] + (beta.defined() ? beta.data()[c] : 0.0) : xhat[e];
    }
  if (batch_mean) *batch_mean = mu;
  if (batch_var) *batch_var = var;
  std::vector<Tensor> inputs{x};
  if (gamma.defined()) inputs.push_back(gamma);
  if (beta.defined()) inputs.push_back(beta);
  return make_result(
      "batch_norm", x.shape(), std::move(out), inputs,
      [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), rows, cols](
          std::span<const double> g, std::span<const double>) mutable {
        std::vector<double> m1(cols, 0.0), m2(cols, 0.0);
        std::span<double> gx, gg, gb;
        if (x.requires_grad()) gx = x.grad_mut();
        if (gamma.defined() && gamma.requires_grad()) gg = gamma.grad_mut();
        if (beta.defined() && beta.requires_grad()) gb = beta.grad_mut();
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t e = r * cols + c;
            if (!gg.empty()) gg[c] += g[e] * xhat[e];
            if (!gb.empty()) gb[c] += g[e];
            const double d = g[e] * (gamma.defined() ? gamma.data()[c] : 1.0);
            m1[c] += d;
            m2[c] += d * xhat[e];
          }
        if (gx.empty()) return;
        const double inv_rows = 1.0 / static_cast<double>(rows);
        for (std::size_t r = 0; r < rows; ++r)
          for (std::size_t c = 0; c < cols; ++c) {
            const std::size_t e = r * cols + c;
            const double d = g[e] * (gamma.defined() ? gamma.data()[c] : 1.0);
            gx[e] += inv_std[c] * (d - m1[c] * inv_rows - xhat[e] * m2[c] * inv_rows);
          }
      });
}

namespace {

// (x - mean) / sqrt(var + eps) * gamma + beta with frozen statistics.
Tensor batch_norm_eval(const Tensor& x, const Tensor& gamma, const Tensor& beta, const Tensor& mean,
                       const Tensor& var, double eps) {
  const std::size_t rows = x.rows(), cols = x.cols();
  std::vector<double> inv_std(cols);
  for (std::size_t c = 0; c < cols; ++c) inv_std[c] = 1.0 / std::sqrt(var.data()[c] + eps);
  auto xd = x.data();
  Buffer out(rows * cols);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < cols; ++c) {
      const std::size_t e = r * cols + c;
      out[e] = (xd[e] - mean.data()[c]) * inv_std[c] * gamma.data()[c] + beta.data()[c];
    }
  return make_result("batch_norm_eval", x.shape(), std::move(out), {x, gamma, beta},
                     [x, gamma, beta, mean, inv_std, rows, cols](std::span<const double> g,
                                                                   std::span<const double>) mutable {
                       auto xd = x.data();
                       std::span<double> gx, gg, gb;
                       if (x.requires_grad()) gx = x.grad_mut();
                       if (gamma.requires_grad()) gg = gamma.grad_mut();
                       if (beta.requires_grad()) gb = beta.grad_mut();
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t c = 0; c < cols; ++c) {
                           const std::size_t e = r * cols + c;
                           const double xh = (xd[e] - mean.data()[c]) * inv_std[c];
                           if (!gx.empty()) gx[e] += g[e] * gamma.data()[c] * inv_std[c];
                           if (!gg.empty()) gg[c] += g[e] * xh;
                           if (!gb.empty()) gb[c] += g[e];
                         }
                     });
}

}  // namespace

LayerNormLayer::LayerNormLayer(std::size_t dim, double eps)
    : eps_(eps), gamma_(Tensor::full(1, dim, 1.0, true)), beta_(Tensor::zeros(1, dim, true)) {
  check_positive(dim, "layer_norm dim");
}

Tensor LayerNormLayer::forward(const Tensor& x, const ForwardContext&) const {
  check_input(x);
  return layer_norm(x, gamma_, beta_, eps_);
}

std::vector<Parameter> LayerNormLayer::parameters() const {
  return {{"gamma", Role::NormAffine, gamma_}, {"beta", Role::NormAffine, beta_}};
}

std::unique_ptr<Layer> LayerNormLayer::clone() const {
  auto copy = std::make_unique<LayerNormLayer>(*this);
  copy->gamma_ = deep(gamma_);
  copy->beta_ = deep(beta_);
  return copy;
}

BatchNormLayer::BatchNormLayer(std::size_t dim, double momentum, double eps)
    : momentum_(momentum),
      eps_(eps),
      gamma_(Tensor::full(1, dim, 1.0, true)),
      beta_(Tensor::zeros(1, dim, true)),
      running_mean_(Tensor::zeros(1, dim)),
      running_var_(Tensor::full(1, dim, 1.0)) {
  check_positive(dim, "batch_norm dim");
}

Tensor BatchNormLayer::forward(const Tensor& x, const ForwardContext& ctx) const {
  check_input(x);
  if (!ctx.training) return batch_norm_eval(x, gamma_, beta_, running_mean_, running_var_, eps_);
  std::vector<double> mu, var;
  Tensor y = batch_norm_train(x, gamma_, beta_, eps_, &mu, &var);
  // Running statistics are plain buffers; only a training session mutates them.
  Tensor rm = running_mean_, rv = running_var_;
  const double unbias = static_cast<double>(x.rows()) / static_cast<double>(x.rows() - 1);
  for (std::size_t c = 0; c < mu.size(); ++c) {
    rm.data_mut()[c] = (1.0 - momentum_) * rm.data()[c] + momentum_ * mu[c];
    rv.data_mut()[c] = (1.0 - momentum_) * rv.data()[c] + momentum_ * var[c] * unbias;
  }
  return y;
}

std::vector<Parameter> BatchNormLayer::parameters() const {
  return {{"gamma", Role::NormAffine, gamma_}, {"beta", Role::NormAffine, beta_}};
}

std::vector<Parameter> BatchNormLayer::buffers() const {
  return {{"running_mean", Role::NormAffine, running_mean_}, {"running_var", Role::NormAffine, running_var_}};
}

std::unique_ptr<Layer> BatchNormLayer::clone() const {
  auto copy = std::make_unique<BatchNormLayer>(*this);
  copy->gamma_ = deep(gamma_);
  copy->beta_ = deep(beta_);
  copy->running_mean_ = deep(running_mean_);
  copy->running_var_ = deep(running_var_);
  return copy;
}

Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64* rng) {
  if (!(p >= 0.0 && p < 1.0)) throw ValueError("dropout probability must be in [0, 1), got " + std::to_string(p));
  if (!training || p == 0.0) return x;
  if (rng == nullptr) throw ValueError("dropout in training mode needs a random generator");
  std::bernoulli_distribution keep(1.0 - p);
  const double scale = 1.0 / (1.0 - p);
  std::vector<double> mask(x.size());
  for (double& m : mask) m = keep(*rng) ? scale : 0.0;
  Buffer out(x.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.data()[i] * mask[i];
  return make_result("dropout", x.shape(), std::move(out), {x},
                     [x, mask = std::move(mask)](std::span<const double> g, std::span<const double>) mutable {
                       if (!x.requires_grad()) return;
                       auto dst = x.grad_mut();
                       for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += g[i] * mask[i];
                     });
}

DropoutLayer::DropoutLayer(std::size_t dim, double p) : dim_(dim), p_(p) {
  if (!(p >= 0.0 && p < 1.0)) throw ValueError("dropout probability must be in [0, 1), got " + std::to_string(p));
}

Tensor DropoutLayer::forward(const Tensor& x, const ForwardContext& ctx) const {
  check_input(x);
  return dropout(x, p_, ctx.training, ctx.rng);
}

std::unique_ptr<Layer> DropoutLayer::clone() const { return std::make_unique<DropoutLayer>(dim_, p_); }

Tensor ReLULayer::forward(const Tensor& x, const ForwardContext&) const {
  check_input(x);
  return relu(x);
}

}  // namespace trukan::nn
