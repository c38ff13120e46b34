#include "trukan/knots.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "trukan/error.hpp"

namespace trukan::basis {

namespace {

double softplus(double r) { return r > 30.0 ? r : std::log1p(std::exp(r)); }
double logistic(double r) { return r >= 0.0 ? 1.0 / (1.0 + std::exp(-r)) : std::exp(r) / (1.0 + std::exp(r)); }

void check_range(double lo, double hi, std::size_t count) {
  if (count < 1) throw ValueError("knot count must be >= 1");
  if (!(hi > lo) || !std::isfinite(lo) || !std::isfinite(hi)) {
    throw ValueError("knot range must satisfy lo < hi, got (" + std::to_string(lo) + ", " + std::to_string(hi) + ")");
  }
}

}  // namespace

const char* to_string(KnotMode mode) { return mode == KnotMode::Fixed ? "fixed" : "learnable"; }
const char* to_string(KnotSharing sharing) { return sharing == KnotSharing::Shared ? "shared" : "individual"; }

KnotSet KnotSet::fixed(double lo, double hi, std::size_t count) {
  check_range(lo, hi, count);
  KnotSet ks;
  ks.mode_ = KnotMode::Fixed;
  ks.lo_ = lo;
  ks.hi_ = hi;
  ks.count_ = count;
  return ks;
}

KnotSet KnotSet::learnable(double lo, double hi, std::size_t count) {
  KnotSet ks = fixed(lo, hi, count);
  ks.mode_ = KnotMode::Learnable;
  if (count > 1) ks.raw_ = Tensor::zeros(1, count - 1, true);
  return ks;
}

std::vector<double> KnotSet::values() const {
  NoGradGuard guard;
  auto t = materialize();
  return {t.data().begin(), t.data().end()};
}

Tensor KnotSet::materialize() const {
  if (count_ < 1) throw ValueError("materialize_knots: empty knot set");
  const std::size_t g = count_;
  if (g == 1) return Tensor::scalar(0.5 * (lo_ + hi_));
  if (mode_ == KnotMode::Fixed) {
    Buffer t(g);
    const double step = (hi_ - lo_) / static_cast<double>(g - 1);
    for (std::size_t j = 0; j < g; ++j) t[j] = lo_ + static_cast<double>(j) * step;
    t[g - 1] = hi_;
    return Tensor::adopt({1, g}, std::move(t));
  }

  const std::size_t gaps = g - 1;
  auto r = raw_.data();
  std::vector<double> sp(gaps);
  for (std::size_t i = 0; i < gaps; ++i) sp[i] = softplus(r[i]);
  // Normalise by the largest term so huge raw values cannot overflow the sum.
  const double peak = *std::max_element(sp.begin(), sp.end());
  std::vector<double> w(gaps, 1.0 / static_cast<double>(gaps));
  double total = 0.0;
  if (peak > 0.0 && std::isfinite(peak)) {
    for (double v : sp) total += v / peak;
    for (std::size_t i = 0; i < gaps; ++i) w[i] = (sp[i] / peak) / total;
  }
  const double eps = min_spacing();
  const double free_span = (hi_ - lo_) - static_cast<double>(gaps) * eps;
  Buffer t(g);
  double cum = 0.0;
  t[0] = lo_;
  for (std::size_t j = 1; j < g; ++j) {
    cum += w[j - 1];
    t[j] = lo_ + static_cast<double>(j) * eps + free_span * cum;
  }
  t[g - 1] = hi_;

  const bool degenerate = !(peak > 0.0 && std::isfinite(peak));
  return make_result(
      "materialize_knots", {1, g}, std::move(t), {raw_},
      [raw = raw_, w, total, peak, free_span, gaps, degenerate](std::span<const double> grad,
                                                                 std::span<const double>) mutable {
        if (!raw.requires_grad() || degenerate) return;
        // t_j = lo + j eps + D sum_{i<j} w_i, w_i = sp_i / S, dw_i/dr_m = sigma(r_m)/S (delta_im - w_i).
        // The last knot is pinned to hi, so only j = 1 .. G-2 carry gradient.
        const std::size_t g = gaps + 1;
        std::vector<double> prefix_w(g, 0.0);
        for (std::size_t j = 1; j < g; ++j) prefix_w[j] = prefix_w[j - 1] + w[j - 1];
        double weighted = 0.0;  // sum_j grad_j W_j
        for (std::size_t j = 1; j + 1 < g; ++j) weighted += grad[j] * prefix_w[j];
        std::vector<double> suffix(g + 1, 0.0);  // suffix[m] = sum_{j > m, j < g-1} grad_j
        for (std::size_t j = g - 1; j-- > 0;) suffix[j] = suffix[j + 1] + (j + 1 < g - 1 ? grad[j + 1] : 0.0);
        auto r = raw.data();
        auto dst = raw.grad_mut();
        const double s_scaled = total * peak;
        for (std::size_t m = 0; m < gaps; ++m) {
          dst[m] += free_span * logistic(r[m]) / s_scaled * (suffix[m] - weighted);
        }
      });
}

}  // namespace trukan::basis
