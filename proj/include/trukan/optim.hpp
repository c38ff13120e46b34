#pragma once

#include <string>
#include <vector>

#include <json.hpp>

#include "trukan/network.hpp"

namespace trukan::optim {

struct ParamGroup {
  std::string name;
  std::vector<nn::NamedParameter> params;
  double lr = 5e-4;  // peak learning rate fed to the schedule
  double weight_decay = 1e-4;
  bool decay_exempt = false;
};

enum class LrPreset {
  Table,     // one group at 5e-4
  FineTune,  // body stage 1e-4, head stage 1e-3
};

LrPreset parse_lr_preset(const std::string& name);
const char* to_string(LrPreset preset);

// Splits trainable parameters into groups; knots and normalisation affine
// parameters land in "*.no_decay" groups with weight_decay 0. Empty groups
// are dropped.
std::vector<ParamGroup> make_param_groups(const nn::Network& net, LrPreset preset = LrPreset::Table,
                                          double weight_decay = 1e-4);
std::vector<ParamGroup> make_param_groups(const nn::Network& net, double lr, double weight_decay);

struct AdamWOptions {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class AdamW {
 public:
  explicit AdamW(std::vector<ParamGroup> groups, AdamWOptions options = {});

  // theta *= 1 - lr*wd, then the bias-corrected Adam step. Throws
  // ValueError naming any parameter without a gradient.
  void step();
  void zero_grad();

  std::vector<ParamGroup>& groups() { return groups_; }
  const std::vector<ParamGroup>& groups() const { return groups_; }
  // Current (scheduled) learning rate of each group.
  void set_lr(std::size_t group, double lr) { current_lr_.at(group) = lr; }
  double lr(std::size_t group) const { return current_lr_.at(group); }
  std::size_t steps() const { return t_; }
  const AdamWOptions& options() const { return opts_; }

  nlohmann::json state_json() const;
  void load_state_json(const nlohmann::json& j);

 private:
  std::vector<ParamGroup> groups_;
  std::vector<double> current_lr_;
  AdamWOptions opts_;
  std::vector<std::vector<std::vector<double>>> m_, v_;
  std::size_t t_ = 0;
};

// Slow weights phi follow the fast ones every k inner steps:
//   phi <- phi + alpha (theta - phi); theta <- phi.
class LookAhead {
 public:
  explicit LookAhead(AdamW& inner, std::size_t k = 5, double alpha = 0.5);

  void step();
  void sync();
  AdamW& inner() { return *inner_; }
  std::size_t k() const { return k_; }
  double alpha() const { return alpha_; }
  const std::vector<std::vector<std::vector<double>>>& slow() const { return slow_; }

  nlohmann::json state_json() const;
  void load_state_json(const nlohmann::json& j);

 private:
  AdamW* inner_;
  std::size_t k_;
  double alpha_;
  std::size_t count_ = 0;
  std::vector<std::vector<std::vector<double>>> slow_;
};

// Linear warmup eta/10 -> eta over warmup_epochs, cosine down to min_lr at
// epoch total_epochs - 1, then held at min_lr.
struct WarmupCosine {
  double warmup_epochs = 10.0;
  double total_epochs = 100.0;
  double min_lr = 1e-5;

  // `epoch` may be fractional (epoch + step / steps_per_epoch).
  double lr_at(double eta, double epoch) const;
  double lr_at(double eta, std::size_t epoch, std::size_t step, std::size_t steps_per_epoch) const;
};

}  // namespace trukan::optim
