#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "trukan/layers.hpp"

namespace trukan::nn {

enum class HeadKind { MLP, MLP_N, KAN, KAN_N, SineKAN, SineKAN_N, TruKAN_S, TruKAN_SN, TruKAN_I, TruKAN_IN };

const std::vector<HeadKind>& all_head_kinds();
std::string to_string(HeadKind kind);
// Accepts the canonical names ("TruKAN-SN") case-insensitively, '_' for '-'.
HeadKind parse_head_kind(const std::string& name);
bool is_normalized(HeadKind kind);

struct NamedParameter {
  std::string name;  // "<layer index>.<param name>"
  Role role;
  std::string stage;
  Tensor tensor;
};

class Network {
 public:
  Network() = default;
  Network(const Network& other);
  Network& operator=(const Network& other);
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  void add(std::unique_ptr<Layer> layer, std::string stage = "head");

  // Training-mode forward; rng drives dropout.
  Tensor forward(const Tensor& x, bool training, std::mt19937_64* rng = nullptr) const;
  // Eval-mode forward without building a tape; safe to call concurrently.
  Tensor infer(const Tensor& x) const;

  std::size_t size() const { return layers_.size(); }
  Layer& layer(std::size_t i) { return *layers_.at(i); }
  const Layer& layer(std::size_t i) const { return *layers_.at(i); }
  const std::string& stage(std::size_t i) const { return stages_.at(i); }
  std::size_t in_dim() const;
  std::size_t out_dim() const;

  std::vector<NamedParameter> parameters() const;
  std::vector<NamedParameter> buffers() const;
  std::size_t parameter_count() const;
  void zero_grad() const;
  // Re-zero pruned edges after an optimiser step.
  void enforce_masks();

  std::string head;  // classifier kind or free-form tag
  nlohmann::json meta = nlohmann::json::object();

 private:
  std::vector<std::unique_ptr<Layer>> layers_;
  std::vector<std::string> stages_;
};

struct LayerCount {
  std::size_t index = 0;
  std::string kind;
  std::size_t total = 0;
  std::map<std::string, std::size_t> by_role;
};

struct ParamBreakdown {
  std::vector<LayerCount> layers;
  std::map<std::string, std::size_t> by_role;
  std::size_t total = 0;
};

ParamBreakdown param_count(const Network& net);

// Count under the reference-implementation convention used for published
// toy figures: a B-spline edge carries (G+k) coefficients, two scales and a
// four-number symbolic affine; a truncated-power edge carries its own
// coefficients, and every non-input node of a TruKAN stack owns one bias.
// Removed edges are excluded.
std::size_t reference_convention_count(const Network& net);

struct ClassifierHparams {
  std::size_t grid = 8;
  basis::SplineOrder order{3};
  double lo = -1.0;
  double hi = 1.0;
  double dropout = 0.1;
  KanScaleMode kan_scale = KanScaleMode::Trainable;
  basis::KnotMode knot_mode = basis::KnotMode::Fixed;
  // MLP hidden width the other kinds are matched against when hidden == 0.
  std::size_t reference_hidden = 256;
  std::uint64_t seed = 0;
};

Network build_classifier(HeadKind kind, std::size_t in_features, std::size_t hidden, std::size_t classes,
                         const ClassifierHparams& hp = {});
// Hidden width actually used for `kind` when build_classifier gets hidden == 0.
std::size_t parity_hidden(HeadKind kind, std::size_t in_features, std::size_t classes, const ClassifierHparams& hp);

// Plain stack of spline layers, e.g. widths {2, 3, 1}.
Network build_trukan_stack(const std::vector<std::size_t>& widths, const TruKANConfig& tmpl);
Network build_kan_stack(const std::vector<std::size_t>& widths, const KANConfig& tmpl);

// Checkpoint schema "trukan-network", version 1:
// {format, version, head, meta, layers: [{type, stage, config, params: {name:
//  {shape: [r, c], data: [...]}}, buffers: {...}, mask?: [0/1 ...]}]}
inline constexpr int kCheckpointVersion = 1;
nlohmann::json to_json(const Network& net);
Network network_from_json(const nlohmann::json& j);
void save_checkpoint(const Network& net, const std::string& path);
Network load_checkpoint(const std::string& path);
// FNV-1a 64-bit over the canonical JSON dump, as 16 hex digits.
std::string checkpoint_hash(const Network& net);
std::string fnv1a_hex(const std::string& bytes);

}  // namespace trukan::nn
