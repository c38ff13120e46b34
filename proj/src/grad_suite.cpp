#include "trukan/grad_suite.hpp"

#include <functional>
#include <random>

#include "trukan/layers.hpp"
#include "trukan/ops.hpp"
#include "trukan/train.hpp"

namespace trukan {

namespace {

using LayerFactory = std::function<std::unique_ptr<nn::Layer>(std::uint64_t seed)>;

struct Case {
  std::string name;
  LayerFactory make;
  std::size_t batch = 4;
  double input_lo = -0.95;
  double input_hi = 0.95;
};

Tensor random_tensor(std::size_t r, std::size_t c, double lo, double hi, std::mt19937_64& rng, bool rg) {
  std::uniform_real_distribution<double> u(lo, hi);
  Buffer b(r * c);
  for (double& v : b) v = u(rng);
  return Tensor::adopt({r, c}, std::move(b), rg);
}

nn::TruKANConfig trukan(basis::KnotMode mode, basis::KnotSharing sharing, std::uint64_t seed, bool pre_norm = false) {
  nn::TruKANConfig c;
  c.in = 3;
  c.out = 2;
  c.grid = 5;
  c.knot_mode = mode;
  c.sharing = sharing;
  c.pre_norm = pre_norm;
  c.seed = seed;
  return c;
}

std::vector<Case> cases() {
  using basis::KnotMode;
  using basis::KnotSharing;
  std::vector<Case> cs;
  cs.push_back({"trukan-fixed-shared", [](std::uint64_t s) {
                  return std::make_unique<nn::TruKANLayer>(trukan(KnotMode::Fixed, KnotSharing::Shared, s));
                }});
  cs.push_back({"trukan-fixed-individual", [](std::uint64_t s) {
                  return std::make_unique<nn::TruKANLayer>(trukan(KnotMode::Fixed, KnotSharing::Individual, s));
                }});
  cs.push_back({"trukan-learnable-shared", [](std::uint64_t s) {
                  return std::make_unique<nn::TruKANLayer>(trukan(KnotMode::Learnable, KnotSharing::Shared, s));
                }});
  cs.push_back({"trukan-learnable-individual", [](std::uint64_t s) {
                  return std::make_unique<nn::TruKANLayer>(trukan(KnotMode::Learnable, KnotSharing::Individual, s));
                }});
  cs.push_back({"trukan-pre-norm", [](std::uint64_t s) {
                  return std::make_unique<nn::TruKANLayer>(trukan(KnotMode::Fixed, KnotSharing::Shared, s, true));
                }});
  for (auto mode : {nn::KanScaleMode::Trainable, nn::KanScaleMode::Fixed}) {
    cs.push_back({mode == nn::KanScaleMode::Trainable ? "kan-pbt" : "kan-pbf", [mode](std::uint64_t s) {
                    nn::KANConfig c;
                    c.in = 3;
                    c.out = 2;
                    c.grid = 5;
                    c.scale_mode = mode;
                    c.seed = s;
                    return std::make_unique<nn::KANLayer>(c);
                  }});
  }
  cs.push_back({"sinekan", [](std::uint64_t s) {
                  nn::SineKANConfig c;
                  c.in = 3;
                  c.out = 2;
                  c.grid = 4;
                  c.seed = s;
                  return std::make_unique<nn::SineKANLayer>(c);
                }});
  cs.push_back({"dense", [](std::uint64_t s) { return std::make_unique<nn::DenseLayer>(3, 2, true, s); }});
  cs.push_back({"layer-norm", [](std::uint64_t) { return std::make_unique<nn::LayerNormLayer>(4); }});
  cs.push_back({"batch-norm", [](std::uint64_t) { return std::make_unique<nn::BatchNormLayer>(3); }, 5});
  cs.push_back({"dropout", [](std::uint64_t) { return std::make_unique<nn::DropoutLayer>(4, 0.3); }});
  cs.push_back({"relu", [](std::uint64_t) { return std::make_unique<nn::ReLULayer>(4); }, 4, 0.1, 0.95});
  return cs;
}

void update(GradSuiteRow& row, const GradcheckResult& r) {
  if (r.max_rel_error >= row.max_rel_error) {
    row.max_rel_error = r.max_rel_error;
    row.worst = r.worst;
  }
  row.entries += r.entries_checked;
  ++row.trials;
}

}  // namespace

std::vector<std::string> gradient_suite_cases() {
  std::vector<std::string> names;
  for (const auto& c : cases()) names.push_back(c.name);
  names.push_back("mse-loss");
  names.push_back("cross-entropy");
  return names;
}

std::vector<GradSuiteRow> gradient_suite(std::size_t trials, std::uint64_t seed, const GradcheckOptions& options) {
  std::vector<GradSuiteRow> rows;
  for (const auto& c : cases()) {
    GradSuiteRow row;
    row.name = c.name;
    for (std::size_t t = 0; t < trials; ++t) {
      const std::uint64_t s = seed * 1000003ULL + t;
      std::mt19937_64 rng(s);
      auto layer = c.make(s);
      std::vector<Tensor> inputs;
      // Perturb every parameter away from its initialisation pattern.
      std::normal_distribution<double> g(0.0, 0.5);
      for (auto& p : layer->parameters()) {
        for (double& v : p.tensor.data_mut()) v = p.role == nn::Role::Knot ? g(rng) : v + g(rng);
        inputs.push_back(p.tensor);
      }
      double lo = c.input_lo, hi = c.input_hi;
      Tensor x = random_tensor(c.batch, layer->in_dim(), lo, hi, rng, true);
      if (c.name == "relu") {
        // Keep samples off the kink: random signs on magnitudes in [0.1, 0.95].
        std::bernoulli_distribution sign(0.5);
        for (double& v : x.data_mut()) v = sign(rng) ? v : -v;
      }
      inputs.push_back(x);
      const Tensor w = random_tensor(c.batch, layer->out_dim(), -1.0, 1.0, rng, false);
      const std::uint64_t drop_seed = s ^ 0x5bd1e995ULL;
      const nn::Layer* lp = layer.get();
      auto loss = [lp, x, w, drop_seed] {
        std::mt19937_64 drop_rng(drop_seed);
        const nn::ForwardContext ctx{true, &drop_rng};
        return sum(mul(lp->forward(x, ctx), w));
      };
      GradcheckOptions o = options;
      o.seed = static_cast<unsigned>(s);
      update(row, gradcheck(loss, inputs, o));
    }
    rows.push_back(std::move(row));
  }

  GradSuiteRow mse, ce;
  mse.name = "mse-loss";
  ce.name = "cross-entropy";
  for (std::size_t t = 0; t < trials; ++t) {
    const std::uint64_t s = seed * 1000003ULL + t;
    std::mt19937_64 rng(s);
    Tensor pred = random_tensor(4, 3, -2.0, 2.0, rng, true);
    Tensor target = random_tensor(4, 3, -2.0, 2.0, rng, true);
    GradcheckOptions o = options;
    o.seed = static_cast<unsigned>(s);
    update(mse, gradcheck([pred, target] { return train::mse_loss(pred, target); }, {pred, target}, o));
    Tensor logits = random_tensor(4, 5, -3.0, 3.0, rng, true);
    Tensor probs = random_tensor(4, 5, 0.05, 1.0, rng, true);
    auto pd = probs.data_mut();
    for (std::size_t r = 0; r < 4; ++r) {
      double z = 0.0;
      for (std::size_t j = 0; j < 5; ++j) z += pd[r * 5 + j];
      for (std::size_t j = 0; j < 5; ++j) pd[r * 5 + j] /= z;
    }
    update(ce, gradcheck([logits, probs] { return train::cross_entropy(logits, probs); }, {logits, probs}, o));
  }
  rows.push_back(std::move(mse));
  rows.push_back(std::move(ce));
  return rows;
}

}  // namespace trukan
