#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include <json.hpp>

#include "trukan/network.hpp"

namespace trukan::analysis {

// ---------------------------------------------------------------------------
// Pruning

struct EdgeScore {
  std::size_t layer = 0;
  std::size_t in = 0;
  std::size_t out = 0;
  double score = 0.0;
};

struct PruneReport {
  double threshold = 0.0;
  std::vector<EdgeScore> removed;  // score recorded when the edge was cut
  std::vector<EdgeScore> kept;     // final scores of surviving edges
  std::size_t params_before = 0;
  std::size_t params_after = 0;
  std::size_t reference_before = 0;  // reference_convention_count
  std::size_t reference_after = 0;
  std::size_t passes = 0;

  nlohmann::json to_json() const;
};

// Edge score = mean |phi(x)| of the edge function over the inputs that reach
// its layer when `inputs` is propagated in eval mode. Edges with score < tau
// are removed; the sweep repeats until nothing changes, since cutting an edge
// alters what downstream layers see.
PruneReport prune(nn::Network& net, const Tensor& inputs, double threshold);
std::vector<EdgeScore> edge_scores(const nn::Network& net, const Tensor& inputs);

// ---------------------------------------------------------------------------
// Activation curves

struct EdgeFilter {
  long layer = -1;  // -1 matches all
  long in = -1;
  long out = -1;
  bool matches(std::size_t l, std::size_t i, std::size_t o) const;
};

struct ActivationCurve {
  std::size_t layer = 0;
  std::size_t in = 0;
  std::size_t out = 0;
  std::vector<double> xs;
  std::vector<double> composite;
  std::vector<std::string> component_names;
  std::vector<std::vector<double>> components;
};

std::vector<ActivationCurve> export_curves(const nn::Network& net, const EdgeFilter& filter, std::size_t n_samples,
                                           double lo, double hi);
// Long-format CSV, schema version 1: layer,in,out,x,composite,<component...>.
// Components a layer does not have are left blank.
void write_curves_csv(std::ostream& out, const std::vector<ActivationCurve>& curves);
// Self-contained SVG: composite solid black, components dashed.
std::string curve_svg(const ActivationCurve& curve);
// Writes curves.csv and edge_<layer>_<in>_<out>.svg under dir; returns paths.
std::vector<std::string> write_curves(const std::string& dir, const std::vector<ActivationCurve>& curves);

// ---------------------------------------------------------------------------
// FLOP sheet (forward pass, eval mode)
//
// Each edge function is counted as if evaluated on its own at every sample:
//   dense weight          2                      (mul + add)
//   truncated-power edge  G (k + 2) + 2 (k + 1)  (per knot: sub, k-1 muls for
//                                                 the power, coefficient mul,
//                                                 add; Horner polynomial)
//   B-spline edge         7 k (k + 1) / 2        (de Boor triangle: 3 for the
//                                                 blend factor, 4 for the blend)
//                       + 4                      (SiLU: exp, add, div, mul)
//                       + 1 (PBT) or 3 (PBF)     (branch sum; PBF also applies
//                                                 its constant to both branches)
//   sine edge             5 F                    (w x, + phase, sin, amp mul, add)
// Work done once per forward pass regardless of batch (PBT folding its
// trainable scales into the coefficients, knot materialisation) is not
// counted, so the total is exactly linear in batch.
// Per-sample node terms: bias add 1 per output, ReLU 1, layer norm 8 per
// feature, batch norm (eval) 4 per feature, dropout (eval) 0.
struct LayerFlops {
  std::size_t index = 0;
  std::string kind;
  std::uint64_t per_sample = 0;
};

struct FlopReport {
  std::vector<LayerFlops> layers;
  std::uint64_t total = 0;
};

FlopReport flop_breakdown(const nn::Network& net, std::size_t batch);
std::uint64_t estimate_flops(const nn::Network& net, std::size_t batch);

// ---------------------------------------------------------------------------
// Benchmark

enum class BenchModel { KAN_PBT, KAN_PBF, SineKAN, TruKAN_FS, TruKAN_FI, TruKAN_LS, TruKAN_LI, MLP };

std::string to_string(BenchModel m);
BenchModel parse_bench_model(const std::string& name);  // e.g. "kan-pbf", "trukan-fs"

struct BenchShape {
  std::size_t in = 512;
  std::size_t out = 256;
  std::size_t batch = 512;
  std::size_t grid = 8;
  int order = 3;
  // Sine frequencies; 0 picks G + k + 1 to match the truncated-power budget.
  std::size_t sine_grid = 0;
};

struct BenchOptions {
  std::size_t trials = 5;
  std::size_t warmup_steps = 20;           // discarded, once per model
  std::size_t steps_per_trial = 20;        // measured
  std::uint64_t seed = 0;
};

struct BenchReport {
  std::string model;
  std::size_t parameters = 0;
  double mean_ms = 0.0;
  double median_ms = 0.0;
  std::vector<double> trial_median_ms;
  std::uint64_t flops = 0;
  std::uint64_t peak_bytes = 0;
  std::size_t trials = 0;
  std::size_t measured_steps = 0;
  std::size_t threads = 1;
};

nn::Network bench_network(BenchModel model, const BenchShape& shape, std::uint64_t seed = 0);
// One train step = forward + MSE + backward + AdamW, timed with the monotonic
// clock; peak bytes are the tracked-allocator high-water mark above the
// pre-step baseline, maximised over measured steps.
BenchReport bench_one(BenchModel model, const BenchShape& shape, const BenchOptions& opts);
std::vector<BenchReport> bench(const std::vector<BenchModel>& models, const BenchShape& shape,
                               const BenchOptions& opts);

inline constexpr int kBenchSchemaVersion = 1;
void write_bench_csv(std::ostream& out, const std::vector<BenchReport>& reports);
nlohmann::json bench_json(const std::vector<BenchReport>& reports, const BenchShape& shape, const BenchOptions& opts);
std::string bench_table(const std::vector<BenchReport>& reports);

}  // namespace trukan::analysis
