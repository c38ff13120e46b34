#include "trukan/optim.hpp"

#include <cmath>
#include <numbers>

#include "trukan/error.hpp"

namespace trukan::optim {

using nlohmann::json;

LrPreset parse_lr_preset(const std::string& name) {
  if (name == "table") return LrPreset::Table;
  if (name == "finetune" || name == "fine-tune") return LrPreset::FineTune;
  throw ValueError("unknown lr preset '" + name + "' (expected table or finetune)");
}

const char* to_string(LrPreset preset) { return preset == LrPreset::Table ? "table" : "finetune"; }

namespace {

bool decay_exempt(nn::Role role) { return role == nn::Role::Knot || role == nn::Role::NormAffine; }

std::vector<ParamGroup> split(const nn::Network& net, const std::vector<std::pair<std::string, double>>& stages,
                              double weight_decay, bool by_stage) {
  std::vector<ParamGroup> groups;
  for (const auto& [stage, lr] : stages) {
    ParamGroup decay{stage, {}, lr, weight_decay, false};
    ParamGroup plain{stage + ".no_decay", {}, lr, 0.0, true};
    for (const auto& p : net.parameters()) {
      if (by_stage && p.stage != stage) continue;
      (decay_exempt(p.role) ? plain : decay).params.push_back(p);
    }
    if (!decay.params.empty()) groups.push_back(std::move(decay));
    if (!plain.params.empty()) groups.push_back(std::move(plain));
  }
  return groups;
}

}  // namespace

std::vector<ParamGroup> make_param_groups(const nn::Network& net, LrPreset preset, double weight_decay) {
  if (preset == LrPreset::Table) return split(net, {{"all", 5e-4}}, weight_decay, false);
  return split(net, {{"body", 1e-4}, {"head", 1e-3}}, weight_decay, true);
}

std::vector<ParamGroup> make_param_groups(const nn::Network& net, double lr, double weight_decay) {
  return split(net, {{"all", lr}}, weight_decay, false);
}

// ---------------------------------------------------------------------------

AdamW::AdamW(std::vector<ParamGroup> groups, AdamWOptions options) : groups_(std::move(groups)), opts_(options) {
  for (const auto& g : groups_) {
    current_lr_.push_back(g.lr);
    auto& mg = m_.emplace_back();
    auto& vg = v_.emplace_back();
    for (const auto& p : g.params) {
      mg.emplace_back(p.tensor.size(), 0.0);
      vg.emplace_back(p.tensor.size(), 0.0);
    }
  }
}

void AdamW::step() {
  for (const auto& g : groups_)
    for (const auto& p : g.params)
      if (!p.tensor.has_grad()) throw ValueError("AdamW: parameter '" + p.name + "' has no gradient");
  ++t_;
  const double b1 = opts_.beta1, b2 = opts_.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    const double lr = current_lr_[gi];
    const double decay = 1.0 - lr * groups_[gi].weight_decay;
    for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      const Tensor& t = groups_[gi].params[pi].tensor;
      auto theta = t.data_mut();
      auto grad = t.grad_mut();
      auto& m = m_[gi][pi];
      auto& v = v_[gi][pi];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        theta[i] *= decay;
        m[i] = b1 * m[i] + (1.0 - b1) * grad[i];
        v[i] = b2 * v[i] + (1.0 - b2) * grad[i] * grad[i];
        theta[i] -= lr * (m[i] / c1) / (std::sqrt(v[i] / c2) + opts_.eps);
      }
    }
  }
}

void AdamW::zero_grad() {
  for (auto& g : groups_)
    for (auto& p : g.params) p.tensor.zero_grad();
}

json AdamW::state_json() const {
  json groups = json::array();
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    json params = json::object();
    for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi)
      params[groups_[gi].params[pi].name] = {{"m", m_[gi][pi]}, {"v", v_[gi][pi]}};
    groups.push_back({{"name", groups_[gi].name},
                      {"lr", current_lr_[gi]},
                      {"weight_decay", groups_[gi].weight_decay},
                      {"params", std::move(params)}});
  }
  return {{"format", "trukan-optimizer"}, {"version", 1}, {"step", t_},
          {"beta1", opts_.beta1},         {"beta2", opts_.beta2}, {"eps", opts_.eps}, {"groups", std::move(groups)}};
}

void AdamW::load_state_json(const json& j) {
  if (j.at("format") != "trukan-optimizer") throw FormatError("optimizer state: unexpected format tag");
  const auto& groups = j.at("groups");
  if (groups.size() != groups_.size()) throw FormatError("optimizer state: group count mismatch");
  for (std::size_t gi = 0; gi < groups_.size(); ++gi) {
    current_lr_[gi] = groups[gi].at("lr");
    for (std::size_t pi = 0; pi < groups_[gi].params.size(); ++pi) {
      const auto& e = groups[gi].at("params").at(groups_[gi].params[pi].name);
      m_[gi][pi] = e.at("m").get<std::vector<double>>();
      v_[gi][pi] = e.at("v").get<std::vector<double>>();
      if (m_[gi][pi].size() != groups_[gi].params[pi].tensor.size()) {
        throw FormatError("optimizer state: moment size mismatch for " + groups_[gi].params[pi].name);
      }
    }
  }
  t_ = j.at("step");
}

// ---------------------------------------------------------------------------

LookAhead::LookAhead(AdamW& inner, std::size_t k, double alpha) : inner_(&inner), k_(k), alpha_(alpha) {
  if (k == 0) throw ValueError("LookAhead: k must be positive");
  if (!(alpha >= 0.0 && alpha <= 1.0)) throw ValueError("LookAhead: alpha must be in [0, 1]");
  for (const auto& g : inner.groups()) {
    auto& sg = slow_.emplace_back();
    for (const auto& p : g.params) sg.emplace_back(p.tensor.data().begin(), p.tensor.data().end());
  }
}

void LookAhead::step() {
  inner_->step();
  if (++count_ % k_ == 0) sync();
}

void LookAhead::sync() {
  const auto& groups = inner_->groups();
  for (std::size_t gi = 0; gi < groups.size(); ++gi)
    for (std::size_t pi = 0; pi < groups[gi].params.size(); ++pi) {
      auto theta = groups[gi].params[pi].tensor.data_mut();
      auto& phi = slow_[gi][pi];
      for (std::size_t i = 0; i < theta.size(); ++i) {
        phi[i] = (1.0 - alpha_) * phi[i] + alpha_ * theta[i];
        theta[i] = phi[i];
      }
    }
}

json LookAhead::state_json() const {
  return {{"k", k_}, {"alpha", alpha_}, {"count", count_}, {"slow", slow_}, {"inner", inner_->state_json()}};
}

void LookAhead::load_state_json(const json& j) {
  inner_->load_state_json(j.at("inner"));
  count_ = j.at("count");
  auto slow = j.at("slow").get<std::vector<std::vector<std::vector<double>>>>();
  if (slow.size() != slow_.size()) throw FormatError("lookahead state: group count mismatch");
  slow_ = std::move(slow);
}

// ---------------------------------------------------------------------------

double WarmupCosine::lr_at(double eta, double epoch) const {
  const double start = eta / 10.0;
  const double final_epoch = total_epochs - 1.0;
  if (epoch <= 0.0) return start;
  if (epoch < warmup_epochs) return start + (eta - start) * (epoch / warmup_epochs);
  if (epoch >= final_epoch) return min_lr;
  const double progress = (epoch - warmup_epochs) / (final_epoch - warmup_epochs);
  return min_lr + (eta - min_lr) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress));
}

double WarmupCosine::lr_at(double eta, std::size_t epoch, std::size_t step, std::size_t steps_per_epoch) const {
  const double frac = steps_per_epoch == 0 ? 0.0 : static_cast<double>(step) / static_cast<double>(steps_per_epoch);
  return lr_at(eta, static_cast<double>(epoch) + frac);
}

}  // namespace trukan::optim
