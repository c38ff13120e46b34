#pragma once

#include <cstddef>
#include <vector>

#include "trukan/tensor.hpp"

namespace trukan::basis {

enum class KnotMode { Fixed, Learnable };
enum class KnotSharing { Shared, Individual };

const char* to_string(KnotMode mode);
const char* to_string(KnotSharing sharing);

// Ordered knot sequence t_0 < ... < t_{G-1} inside [lo, hi].
//
// Fixed knots form the equally spaced grid lo + j (hi - lo)/(G - 1); a single
// knot sits at the midpoint. Learnable knots keep t_0 = lo and t_{G-1} = hi
// and place the interior through G-1 raw gap parameters:
//
//   gap_i = eps + (hi - lo - (G-1) eps) * softplus(r_i) / sum_l softplus(r_l)
//
// with eps = 1e-4 (hi - lo), so any finite raw vector yields strictly
// increasing knots and equal raw values reproduce the fixed grid.
class KnotSet {
 public:
  KnotSet() = default;
  static KnotSet fixed(double lo, double hi, std::size_t count);
  static KnotSet learnable(double lo, double hi, std::size_t count);

  KnotMode mode() const { return mode_; }
  double lo() const { return lo_; }
  double hi() const { return hi_; }
  std::size_t count() const { return count_; }
  double min_spacing() const { return 1e-4 * (hi_ - lo_); }

  // Trainable gap parameters (1 x (G-1)); undefined for fixed knots.
  const Tensor& raw() const { return raw_; }
  Tensor& raw() { return raw_; }
  std::size_t parameter_count() const { return mode_ == KnotMode::Learnable ? raw_.size() : 0; }

  // 1 x G tensor of knot positions, differentiable in raw() when learnable.
  Tensor materialize() const;
  std::vector<double> values() const;

 private:
  KnotMode mode_ = KnotMode::Fixed;
  double lo_ = -1.0;
  double hi_ = 1.0;
  std::size_t count_ = 0;
  Tensor raw_;
};

inline Tensor materialize_knots(const KnotSet& ks) { return ks.materialize(); }

}  // namespace trukan::basis
