#pragma once

#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "trukan/basis.hpp"
#include "trukan/knots.hpp"
#include "trukan/tensor.hpp"

namespace trukan::nn {

// Role of a trainable tensor; drives optimizer grouping and count breakdowns.
enum class Role { SplineCoeff, PolyCoeff, Knot, BaseWeight, Scale, Weight, Bias, NormAffine, Amplitude, Frequency };

const char* to_string(Role role);

struct Parameter {
  std::string name;
  Role role;
  Tensor tensor;
};

struct ForwardContext {
  bool training = false;
  std::mt19937_64* rng = nullptr;  // dropout masks; required in training mode
};

class Layer {
 public:
  virtual ~Layer() = default;

  virtual std::string kind() const = 0;
  virtual std::size_t in_dim() const = 0;
  virtual std::size_t out_dim() const = 0;

  // Const so that a frozen network can be evaluated from several threads.
  // Training-mode BatchNorm updates its running statistics.
  virtual Tensor forward(const Tensor& x, const ForwardContext& ctx) const = 0;

  // Trainable tensors (shared handles).
  virtual std::vector<Parameter> parameters() const { return {}; }
  // Non-trainable tensors that still belong in a checkpoint.
  virtual std::vector<Parameter> buffers() const { return {}; }

  virtual std::unique_ptr<Layer> clone() const = 0;

  // Trainable scalars, excluding coefficients of pruned edges.
  virtual std::size_t parameter_count() const;

 protected:
  void check_input(const Tensor& x) const;
};

// Edge-structured layers (one univariate function per input/output pair)
// support pruning and curve export.
class EdgeLayer : public Layer {
 public:
  struct Components {
    std::vector<std::string> names;
    std::vector<std::vector<double>> values;  // one row per component
  };

  // Values of edge (in -> out) at the given scalar inputs, split into its
  // additive components.
  virtual Components edge_components(std::size_t in, std::size_t out, std::span<const double> xs) const = 0;
  std::vector<double> edge_values(std::size_t in, std::size_t out, std::span<const double> xs) const;

  bool edge_active(std::size_t in, std::size_t out) const { return mask_.empty() || mask_[in * out_dim() + out]; }
  std::size_t active_edges() const;
  // Zeroes every coefficient of the edge and excludes it from the count.
  void remove_edge(std::size_t in, std::size_t out);
  // Re-zeroes removed edges (after an optimizer step).
  void enforce_mask();
  const std::vector<bool>& mask() const { return mask_; }
  void set_mask(std::vector<bool> mask);

  // Trainable scalars owned by one edge.
  virtual std::size_t parameters_per_edge() const = 0;
  std::size_t parameter_count() const override;

 protected:
  virtual void zero_edge(std::size_t in, std::size_t out) = 0;
  std::vector<bool> mask_;
};

struct TruKANConfig {
  std::size_t in = 1;
  std::size_t out = 1;
  std::size_t grid = 8;  // number of knots G
  basis::SplineOrder order{3};
  double lo = -1.0;
  double hi = 1.0;
  basis::KnotMode knot_mode = basis::KnotMode::Fixed;
  basis::KnotSharing sharing = basis::KnotSharing::Shared;
  // Per-sample normalisation of the input before the basis (no affine).
  bool pre_norm = false;
  // Budget for the per-output basis tensors of individual knots.
  std::size_t individual_chunk_bytes = std::size_t{256} << 20;
  std::uint64_t seed = 0;
};

// Truncated-power spline plus polynomial base:
//   y_o = sum_i [ sum_j c[i,j,o] (x_i - t_{o?,j})_+^k + sum_r a[i,r,o] x_i^r ]
// Coefficients are stored as GEMM operands: coeffs (in*G x out) with row
// i*G + j, poly (in*(k+1) x out) with row i*(k+1) + r.
class TruKANLayer final : public EdgeLayer {
 public:
  explicit TruKANLayer(const TruKANConfig& config);

  std::string kind() const override { return "trukan"; }
  std::size_t in_dim() const override { return cfg_.in; }
  std::size_t out_dim() const override { return cfg_.out; }
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const override;
  std::vector<Parameter> parameters() const override;
  std::vector<Parameter> buffers() const override;
  std::unique_ptr<Layer> clone() const override;
  Components edge_components(std::size_t in, std::size_t out, std::span<const double> xs) const override;
  std::size_t parameters_per_edge() const override;

  const TruKANConfig& config() const { return cfg_; }
  int order() const { return cfg_.order.value(); }
  Tensor& coeffs() { return coeffs_; }
  Tensor& poly() { return poly_; }
  const Tensor& coeffs() const { return coeffs_; }
  const Tensor& poly() const { return poly_; }
  std::vector<basis::KnotSet>& knot_sets() { return knots_; }
  const std::vector<basis::KnotSet>& knot_sets() const { return knots_; }
  // Knot positions used by output `out`.
  std::vector<double> knots_for(std::size_t out) const;

  // Frozen SiLU carry-over (in x out) used by checkpoints converted from
  // B-spline KAN layers; absent by default.
  void set_silu_residual(Tensor weights);
  const Tensor& silu_residual() const { return silu_residual_; }

 protected:
  void zero_edge(std::size_t in, std::size_t out) override;

 private:
  Tensor forward_individual(const Tensor& x, const std::vector<Tensor>& knots) const;

  TruKANConfig cfg_;
  std::vector<basis::KnotSet> knots_;
  Tensor coeffs_;
  Tensor poly_;
  Tensor silu_residual_;
};

enum class KanScaleMode {
  Trainable,  // PBT: per-edge base weight and spline scale are learned
  Fixed,      // PBF: both branches scaled by the constant 1/sqrt(in)
};

struct KANConfig {
  std::size_t in = 1;
  std::size_t out = 1;
  std::size_t grid = 8;  // number of grid intervals
  basis::SplineOrder order{3};
  double lo = -1.0;
  double hi = 1.0;
  KanScaleMode scale_mode = KanScaleMode::Trainable;
  std::uint64_t seed = 0;
};

// B-spline KAN layer on a fixed uniform grid extended by k knots per side:
//   phi(x) = scale_base * SiLU(x) + scale_sp * sum_j c_j B_{j,k}(x)
// PBT: scale_base = base_weight, scale_sp = spline_scale (both trainable).
// PBF: scale_base = base_weight / sqrt(in), scale_sp = 1 / sqrt(in).
class KANLayer final : public EdgeLayer {
 public:
  explicit KANLayer(const KANConfig& config);

  std::string kind() const override { return "kan"; }
  std::size_t in_dim() const override { return cfg_.in; }
  std::size_t out_dim() const override { return cfg_.out; }
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const override;
  std::vector<Parameter> parameters() const override;
  std::unique_ptr<Layer> clone() const override;
  Components edge_components(std::size_t in, std::size_t out, std::span<const double> xs) const override;
  std::size_t parameters_per_edge() const override;

  const KANConfig& config() const { return cfg_; }
  const std::vector<double>& grid() const { return grid_; }
  std::size_t basis_count() const { return cfg_.grid + static_cast<std::size_t>(cfg_.order.value()); }
  double fixed_scale() const;
  Tensor& coeffs() { return coeffs_; }
  Tensor& base_weight() { return base_weight_; }
  Tensor& spline_scale() { return spline_scale_; }
  const Tensor& coeffs() const { return coeffs_; }
  const Tensor& base_weight() const { return base_weight_; }
  const Tensor& spline_scale() const { return spline_scale_; }
  // Effective per-edge scales (in x out, row i*out + o).
  double effective_base_scale(std::size_t in, std::size_t out) const;
  double effective_spline_scale(std::size_t in, std::size_t out) const;

 protected:
  void zero_edge(std::size_t in, std::size_t out) override;

 private:
  KANConfig cfg_;
  std::vector<double> grid_;
  Tensor coeffs_;        // in*(G+k) x out
  Tensor base_weight_;   // in x out
  Tensor spline_scale_;  // in x out, PBT only
};

struct SineKANConfig {
  std::size_t in = 1;
  std::size_t out = 1;
  std::size_t grid = 8;  // frequencies per input
  std::uint64_t seed = 0;
};

// y_o = sum_i sum_g A[i,g,o] sin(w_g x_i + phase[i,g]) + b_o with learnable
// frequencies w shared across inputs and fixed phase offsets.
class SineKANLayer final : public EdgeLayer {
 public:
  explicit SineKANLayer(const SineKANConfig& config);

  std::string kind() const override { return "sinekan"; }
  std::size_t in_dim() const override { return cfg_.in; }
  std::size_t out_dim() const override { return cfg_.out; }
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const override;
  std::vector<Parameter> parameters() const override;
  std::vector<Parameter> buffers() const override;
  std::unique_ptr<Layer> clone() const override;
  Components edge_components(std::size_t in, std::size_t out, std::span<const double> xs) const override;
  std::size_t parameters_per_edge() const override { return cfg_.grid; }

  const SineKANConfig& config() const { return cfg_; }
  Tensor& amplitudes() { return amplitudes_; }
  Tensor& freqs() { return freqs_; }
  Tensor& bias() { return bias_; }

 protected:
  void zero_edge(std::size_t in, std::size_t out) override;

 private:
  SineKANConfig cfg_;
  Tensor amplitudes_;  // in*F x out
  Tensor freqs_;       // 1 x F
  Tensor phases_;      // in x F, fixed
  Tensor bias_;        // 1 x out
};

class DenseLayer final : public Layer {
 public:
  DenseLayer(std::size_t in, std::size_t out, bool bias = true, std::uint64_t seed = 0);

  std::string kind() const override { return "dense"; }
  std::size_t in_dim() const override { return weight_.rows(); }
  std::size_t out_dim() const override { return weight_.cols(); }
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const override;
  std::vector<Parameter> parameters() const override;
  std::unique_ptr<Layer> clone() const override;

  Tensor& weight() { return weight_; }
  Tensor& bias() { return bias_; }
  bool has_bias() const { return bias_.defined(); }

 private:
  Tensor weight_;  // in x out
  Tensor bias_;    // 1 x out
};

class LayerNormLayer final : public Layer {
 public:
  explicit LayerNormLayer(std::size_t dim, double eps = 1e-5);

  std::string kind() const override { return "layer_norm"; }
  std::size_t in_dim() const override { return gamma_.cols(); }
  std::size_t out_dim() const override { return gamma_.cols(); }
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const override;
  std::vector<Parameter> parameters() const override;
  std::unique_ptr<Layer> clone() const override;

  double eps() const { return eps_; }
  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }

 private:
  double eps_;
  Tensor gamma_;
  Tensor beta_;
};

class BatchNormLayer final : public Layer {
 public:
  explicit BatchNormLayer(std::size_t dim, double momentum = 0.1, double eps = 1e-5);

  std::string kind() const override { return "batch_norm"; }
  std::size_t in_dim() const override { return gamma_.cols(); }
  std::size_t out_dim() const override { return gamma_.cols(); }
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const override;
  std::vector<Parameter> parameters() const override;
  std::vector<Parameter> buffers() const override;
  std::unique_ptr<Layer> clone() const override;

  double momentum() const { return momentum_; }
  double eps() const { return eps_; }
  Tensor& gamma() { return gamma_; }
  Tensor& beta() { return beta_; }
  Tensor& running_mean() { return running_mean_; }
  Tensor& running_var() { return running_var_; }

 private:
  double momentum_;
  double eps_;
  Tensor gamma_;
  Tensor beta_;
  Tensor running_mean_;
  Tensor running_var_;
};

class DropoutLayer final : public Layer {
 public:
  DropoutLayer(std::size_t dim, double p);

  std::string kind() const override { return "dropout"; }
  std::size_t in_dim() const override { return dim_; }
  std::size_t out_dim() const override { return dim_; }
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const override;
  std::unique_ptr<Layer> clone() const override;
  double p() const { return p_; }

 private:
  std::size_t dim_;
  double p_;
};

class ReLULayer final : public Layer {
 public:
  explicit ReLULayer(std::size_t dim) : dim_(dim) {}

  std::string kind() const override { return "relu"; }
  std::size_t in_dim() const override { return dim_; }
  std::size_t out_dim() const override { return dim_; }
  Tensor forward(const Tensor& x, const ForwardContext& ctx) const override;
  std::unique_ptr<Layer> clone() const override { return std::make_unique<ReLULayer>(dim_); }

 private:
  std::size_t dim_;
};

// Fused differentiable normalisations (exposed for reuse and testing).
// gamma/beta may be undefined for a plain normalisation.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);
// Normalises with batch statistics; throws ValueError for a single row.
Tensor batch_norm_train(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps,
                        std::vector<double>* batch_mean = nullptr, std::vector<double>* batch_var = nullptr);
Tensor dropout(const Tensor& x, double p, bool training, std::mt19937_64* rng);

// Building blocks of the spline layers.
// Features (x_i - t_j)_+^k at column i*G + j; differentiable in x and knots.
Tensor truncated_features(const Tensor& x, const Tensor& knots, int k);
// Features x_i^r at column i*(k+1) + r; differentiable in x.
Tensor power_features(const Tensor& x, int k);
// B_{j,k}(x_i) over an extended grid at column i*n + j, evaluated level by
// level over the whole grid; differentiable in x.
Tensor bspline_features(const Tensor& x, std::span<const double> grid, int k);

}  // namespace trukan::nn
