#include <doctest.h>

#include <cmath>
#include <random>
#include <thread>

#include "trukan/error.hpp"
#include "trukan/gradcheck.hpp"
#include "trukan/layers.hpp"
#include "trukan/network.hpp"
#include "trukan/ops.hpp"
#include "trukan/train.hpp"

using namespace trukan;
using namespace trukan::nn;

namespace {

Tensor uniform(std::size_t r, std::size_t c, std::uint64_t seed, double lo = -0.95, double hi = 0.95) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  std::vector<double> v(r * c);
  for (double& x : v) x = u(rng);
  return Tensor::from(r, c, v);
}

void jitter(const Layer& layer, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> n(0.0, 0.5);
  for (auto& p : layer.parameters())
    for (double& v : p.tensor.data_mut()) v += n(rng);
}

const ForwardContext kEval{};

TruKANConfig trukan_cfg(std::size_t in, std::size_t out, std::size_t g) {
  TruKANConfig c;
  c.in = in;
  c.out = out;
  c.grid = g;
  return c;
}

}  // namespace

TEST_CASE("zero coefficients give zero output") {
  TruKANLayer t(trukan_cfg(3, 2, 5));
  for (auto& p : t.parameters()) std::fill(p.tensor.data_mut().begin(), p.tensor.data_mut().end(), 0.0);
  const Tensor yt = t.forward(uniform(4, 3, 1), kEval);
  for (double v : yt.data()) CHECK(v == 0.0);

  KANConfig kc;
  kc.in = 3;
  kc.out = 2;
  KANLayer k(kc);
  std::fill(k.coeffs().data_mut().begin(), k.coeffs().data_mut().end(), 0.0);
  std::fill(k.base_weight().data_mut().begin(), k.base_weight().data_mut().end(), 0.0);
  const Tensor yk = k.forward(uniform(4, 3, 1), kEval);
  for (double v : yk.data()) CHECK(v == 0.0);
}

TEST_CASE("TruKAN forward matches the edge-sum formula") {
  TruKANLayer t(trukan_cfg(3, 2, 5));
  jitter(t, 2);
  const Tensor x = uniform(4, 3, 3);
  const Tensor y = t.forward(x, kEval);
  const int k = t.order();
  const auto knots = t.knots_for(0);
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t o = 0; o < 2; ++o) {
      double s = 0.0;
      for (std::size_t i = 0; i < 3; ++i) {
        const double xi = x.at(b, i);
        for (std::size_t j = 0; j < 5; ++j) s += t.coeffs().at(i * 5 + j, o) * std::pow(std::max(xi - knots[j], 0.0), k);
        for (int r = 0; r <= k; ++r) s += t.poly().at(i * (k + 1) + r, o) * std::pow(xi, r);
      }
      CHECK(y.at(b, o) == doctest::Approx(s).epsilon(1e-12));
    }
}

TEST_CASE("shared and individual knots agree for a single output") {
  auto cs = trukan_cfg(3, 1, 6);
  auto ci = cs;
  ci.sharing = basis::KnotSharing::Individual;
  TruKANLayer s(cs), i(ci);
  const Tensor x = uniform(5, 3, 4);
  const auto ys = s.forward(x, kEval), yi = i.forward(x, kEval);
  for (std::size_t r = 0; r < 5; ++r) CHECK(ys.at(r, 0) == doctest::Approx(yi.at(r, 0)).epsilon(1e-14));
}

TEST_CASE("TruKAN gradients for every configuration") {
  for (auto mode : {basis::KnotMode::Fixed, basis::KnotMode::Learnable})
    for (auto sharing : {basis::KnotSharing::Shared, basis::KnotSharing::Individual}) {
      auto c = trukan_cfg(3, 4, 8);
      c.knot_mode = mode;
      c.sharing = sharing;
      TruKANLayer t(c);
      jitter(t, 5);
      Tensor x = uniform(4, 3, 6);
      x.set_requires_grad(true);
      const Tensor w = uniform(4, 4, 7, -1.0, 1.0);
      std::vector<Tensor> in{x};
      for (auto& p : t.parameters()) in.push_back(p.tensor);
      const auto r = gradcheck([&] { return sum(mul(t.forward(x, kEval), w)); }, in);
      CHECK_MESSAGE(r.max_rel_error < 1e-4, basis::to_string(mode) << "/" << basis::to_string(sharing));
    }
}

TEST_CASE("TruKAN additivity over input coordinates") {
  TruKANLayer t(trukan_cfg(3, 2, 5));
  jitter(t, 8);
  const Tensor x = uniform(3, 3, 9);
  const Tensor y = t.forward(x, kEval);
  const Tensor y0 = t.forward(Tensor::zeros(3, 3), kEval);
  std::vector<double> acc(6, 0.0);
  for (std::size_t i = 0; i < 3; ++i) {
    std::vector<double> m(9, 0.0);
    for (std::size_t b = 0; b < 3; ++b) m[b * 3 + i] = x.at(b, i);
    const Tensor yi = t.forward(Tensor::from(3, 3, m), kEval);
    for (std::size_t e = 0; e < 6; ++e) acc[e] += yi.data()[e];
  }
  for (std::size_t e = 0; e < 6; ++e) CHECK(y.data()[e] == doctest::Approx(acc[e] - 2.0 * y0.data()[e]).epsilon(1e-12));
}

TEST_CASE("shared-knot output permutation invariance") {
  TruKANLayer t(trukan_cfg(2, 3, 4));
  jitter(t, 10);
  const Tensor x = uniform(4, 2, 11);
  const Tensor y = t.forward(x, kEval);
  const std::size_t perm[3] = {2, 0, 1};
  TruKANLayer p(t.config());
  for (Tensor* pair : {&p.coeffs(), &p.poly()}) {
    const Tensor& src = pair == &p.coeffs() ? t.coeffs() : t.poly();
    for (std::size_t r = 0; r < src.rows(); ++r)
      for (std::size_t o = 0; o < 3; ++o) pair->data_mut()[r * 3 + perm[o]] = src.at(r, o);
  }
  const Tensor yp = p.forward(x, kEval);
  for (std::size_t b = 0; b < 4; ++b)
    for (std::size_t o = 0; o < 3; ++o) CHECK(yp.at(b, perm[o]) == doctest::Approx(y.at(b, o)).epsilon(1e-14));
}

TEST_CASE("KAN layer") {
  KANConfig c;
  c.in = 4;
  c.out = 2;
  c.scale_mode = KanScaleMode::Fixed;
  KANLayer pbf(c);
  CHECK(pbf.fixed_scale() == 0.5);

  for (auto mode : {KanScaleMode::Trainable, KanScaleMode::Fixed}) {
    c.in = 3;
    c.scale_mode = mode;
    KANLayer k(c);
    jitter(k, 12);
    Tensor x = uniform(4, 3, 13);
    x.set_requires_grad(true);
    const Tensor w = uniform(4, 2, 14, -1.0, 1.0);
    std::vector<Tensor> in{x};
    for (auto& p : k.parameters()) in.push_back(p.tensor);
    CHECK(gradcheck([&] { return sum(mul(k.forward(x, kEval), w)); }, in).max_rel_error < 1e-4);

    // Edge function = base * SiLU + spline scale * expansion.
    const std::vector<double> xs = {-0.8, 0.1, 0.6};
    const auto comp = k.edge_components(1, 0, xs);
    const auto vals = k.edge_values(1, 0, xs);
    for (std::size_t s = 0; s < xs.size(); ++s) {
      std::vector<double> cb(k.basis_count());
      for (std::size_t j = 0; j < cb.size(); ++j) cb[j] = k.coeffs().at(1 * k.basis_count() + j, 0);
      const double oracle = k.effective_base_scale(1, 0) * basis::silu(xs[s]) +
                            k.effective_spline_scale(1, 0) * basis::bspline_expansion(cb, k.grid(), 3, xs[s]);
      CHECK(vals[s] == doctest::Approx(oracle).epsilon(1e-12));
      CHECK(comp.values[0][s] + comp.values[1][s] == doctest::Approx(vals[s]).epsilon(1e-14));
    }
  }
}

TEST_CASE("SineKAN, dense and normalisation gradients") {
  SineKANConfig sc;
  sc.in = 3;
  sc.out = 2;
  sc.grid = 4;
  std::vector<std::unique_ptr<Layer>> layers;
  layers.push_back(std::make_unique<SineKANLayer>(sc));
  layers.push_back(std::make_unique<DenseLayer>(3, 2, true, 1));
  layers.push_back(std::make_unique<LayerNormLayer>(3));
  layers.push_back(std::make_unique<BatchNormLayer>(3));
  for (auto& l : layers) {
    jitter(*l, 15);
    Tensor x = uniform(5, 3, 16);
    x.set_requires_grad(true);
    const Tensor w = uniform(5, l->out_dim(), 17, -1.0, 1.0);
    std::vector<Tensor> in{x};
    for (auto& p : l->parameters()) in.push_back(p.tensor);
    const ForwardContext train{true, nullptr};
    const auto r = gradcheck([&] { return sum(mul(l->forward(x, train), w)); }, in);
    CHECK_MESSAGE(r.max_rel_error < 1e-4, l->kind());
  }
}

TEST_CASE("dense layer count and shape checks") {
  DenseLayer d(2, 3);
  CHECK(d.parameter_count() == 9);
  CHECK_THROWS_AS(d.forward(Tensor::zeros(2, 4), kEval), ShapeError);
  TruKANLayer t(trukan_cfg(3, 2, 5));
  CHECK_THROWS_AS(t.forward(Tensor::zeros(2, 4), kEval), ShapeError);
}

TEST_CASE("layer norm of a constant row is zero") {
  LayerNormLayer ln(4);
  const Tensor y = ln.forward(Tensor::full(2, 4, 3.7), kEval);
  for (double v : y.data()) CHECK(std::abs(v) < 1e-12);
}

TEST_CASE("batch norm statistics and modes") {
  BatchNormLayer bn(3);
  const Tensor x = uniform(50, 3, 18, -4.0, 7.0);
  const Tensor y = bn.forward(x, ForwardContext{true, nullptr});
  for (std::size_t f = 0; f < 3; ++f) {
    double m = 0.0, v = 0.0;
    for (std::size_t b = 0; b < 50; ++b) m += y.at(b, f);
    m /= 50;
    for (std::size_t b = 0; b < 50; ++b) v += (y.at(b, f) - m) * (y.at(b, f) - m);
    v /= 50;
    CHECK(std::abs(m) < 1e-12);
    CHECK(std::abs(v - 1.0) < 1e-3);
  }
  // Running stats moved by momentum 0.1 towards the batch mean.
  double mean0 = 0.0;
  for (std::size_t b = 0; b < 50; ++b) mean0 += x.at(b, 0);
  mean0 /= 50;
  CHECK(bn.running_mean().data()[0] == doctest::Approx(0.1 * mean0));
  CHECK_THROWS_AS(bn.forward(Tensor::zeros(1, 3), ForwardContext{true, nullptr}), ValueError);
  CHECK_NOTHROW(bn.forward(Tensor::zeros(1, 3), kEval));
}

TEST_CASE("batch norm pre-affine statistics are exact without eps") {
  const Tensor x = uniform(40, 2, 19, -3.0, 5.0);
  const Tensor y = batch_norm_train(x, Tensor(), Tensor(), 0.0);
  for (std::size_t f = 0; f < 2; ++f) {
    double m = 0.0, v = 0.0;
    for (std::size_t b = 0; b < 40; ++b) m += y.at(b, f);
    m /= 40;
    for (std::size_t b = 0; b < 40; ++b) v += (y.at(b, f) - m) * (y.at(b, f) - m);
    CHECK(std::abs(m) < 1e-12);
    CHECK(std::abs(v / 40 - 1.0) < 1e-6);
  }
}

TEST_CASE("dropout") {
  const Tensor x = uniform(4, 5, 20);
  std::mt19937_64 rng(1);
  const Tensor same = dropout(x, 0.0, true, &rng);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(same.data()[i] == x.data()[i]);
  const Tensor ev = dropout(x, 0.5, false, nullptr);
  for (std::size_t i = 0; i < x.size(); ++i) CHECK(ev.data()[i] == x.data()[i]);
  CHECK_THROWS_AS(DropoutLayer(3, 1.0), ValueError);
  CHECK_THROWS_AS(DropoutLayer(3, -0.1), ValueError);

  // Mean of train-mode outputs over 1e5 masks approaches the eval output.
  const Tensor one = Tensor::from(1, 2, {0.8, -0.3});
  std::vector<double> acc(2, 0.0);
  const int n = 100000;
  for (int i = 0; i < n; ++i) {
    const Tensor d = dropout(one, 0.3, true, &rng);
    acc[0] += d.data()[0];
    acc[1] += d.data()[1];
  }
  CHECK(std::abs(acc[0] / n - 0.8) < 0.01 * 0.8);
  CHECK(std::abs(acc[1] / n + 0.3) < 0.01 * 0.3);
}

TEST_CASE("classifier layouts") {
  auto kinds = [](const Network& net) {
    std::vector<std::string> k;
    for (std::size_t i = 0; i < net.size(); ++i) k.push_back(net.layer(i).kind());
    return k;
  };
  ClassifierHparams hp;
  const auto mlp = build_classifier(HeadKind::MLP, 16, 32, 4, hp);
  CHECK(kinds(mlp) == std::vector<std::string>{"batch_norm", "dense", "dropout", "relu", "dense"});
  CHECK(dynamic_cast<const DropoutLayer&>(mlp.layer(2)).p() == 0.1);
  const auto sn = build_classifier(HeadKind::TruKAN_SN, 16, 8, 4, hp);
  CHECK(kinds(sn) == std::vector<std::string>{"batch_norm", "trukan", "layer_norm", "trukan"});
  const auto ti = build_classifier(HeadKind::TruKAN_I, 16, 8, 4, hp);
  CHECK(dynamic_cast<const TruKANLayer&>(ti.layer(1)).config().sharing == basis::KnotSharing::Individual);
  CHECK(kinds(build_classifier(HeadKind::KAN_N, 16, 8, 4, hp)) ==
        std::vector<std::string>{"batch_norm", "kan", "layer_norm", "kan"});
  CHECK(kinds(build_classifier(HeadKind::SineKAN, 16, 8, 4, hp)) ==
        std::vector<std::string>{"batch_norm", "sinekan", "sinekan"});
  CHECK_THROWS_AS(parse_head_kind("transformer"), ValueError);
  CHECK(parse_head_kind("trukan_sn") == HeadKind::TruKAN_SN);
}

TEST_CASE("parameter parity across head kinds") {
  ClassifierHparams hp;
  hp.reference_hidden = 64;
  for (std::size_t in : {32u, 256u}) {
    const double ref = static_cast<double>(build_classifier(HeadKind::MLP, in, 0, 10, hp).parameter_count());
    for (HeadKind k : all_head_kinds()) {
      const double n = static_cast<double>(build_classifier(k, in, 0, 10, hp).parameter_count());
      CHECK_MESSAGE(std::abs(n / ref - 1.0) <= 0.10, to_string(k) << " in=" << in);
    }
  }
}

TEST_CASE("parameter counts") {
  auto t = trukan_cfg(2, 3, 8);
  TruKANLayer fixed(t);
  CHECK(fixed.parameter_count() == 3 * 2 * 8 + 3 * 2 * 4);
  t.knot_mode = basis::KnotMode::Learnable;
  CHECK(TruKANLayer(t).parameter_count() == 3 * 2 * 8 + 3 * 2 * 4 + 7);
  t.sharing = basis::KnotSharing::Individual;
  CHECK(TruKANLayer(t).parameter_count() == 3 * 2 * 8 + 3 * 2 * 4 + 3 * 7);

  TruKANConfig tc;
  tc.grid = 3;
  const auto tn = build_trukan_stack({2, 3, 1}, tc);
  CHECK(tn.parameter_count() == 9 * (3 + 4));
  CHECK(reference_convention_count(tn) == 67);
  KANConfig kc;
  kc.grid = 3;
  const auto kn = build_kan_stack({2, 3, 1}, kc);
  CHECK(reference_convention_count(kn) == 108);

  const auto br = param_count(tn);
  CHECK(br.total == tn.parameter_count());
  CHECK(br.by_role.at("spline_coeff") == 27);
  CHECK(br.by_role.at("poly_coeff") == 36);
}

TEST_CASE("pruned edges leave the count") {
  TruKANLayer t(trukan_cfg(2, 3, 4));
  const auto before = t.parameter_count();
  t.remove_edge(1, 2);
  CHECK(t.parameter_count() == before - t.parameters_per_edge());
  for (double v : t.edge_values(1, 2, std::vector<double>{-0.5, 0.0, 0.7})) CHECK(v == 0.0);
  CHECK(t.active_edges() == 5);
}

TEST_CASE("checkpoint round trip") {
  ClassifierHparams hp;
  hp.seed = 4;
  for (HeadKind k : all_head_kinds()) {
    Network net = build_classifier(k, 6, 5, 3, hp);
    jitter(net.layer(1), 22);
    if (auto* e = dynamic_cast<EdgeLayer*>(&net.layer(1))) e->remove_edge(0, 0);
    const Network back = network_from_json(to_json(net));
    CHECK(checkpoint_hash(back) == checkpoint_hash(net));
    const Tensor x = uniform(4, 6, 23);
    const Tensor a = net.infer(x), b = back.infer(x);
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a.data()[i] == b.data()[i]);
  }
  CHECK_THROWS_AS(network_from_json(nlohmann::json{{"format", "other"}}), FormatError);
  auto j = to_json(build_classifier(HeadKind::MLP, 4, 4, 2, hp));
  j["version"] = 99;
  CHECK_THROWS_AS(network_from_json(j), FormatError);
}

TEST_CASE("frozen networks evaluate concurrently") {
  ClassifierHparams hp;
  const Network net = build_classifier(HeadKind::TruKAN_SN, 8, 6, 3, hp);
  const Tensor x = uniform(16, 8, 24);
  const Tensor ref = net.infer(x);
  std::vector<std::vector<double>> outs(4);
  std::vector<std::thread> threads;
  for (std::size_t t = 0; t < 4; ++t) {
    threads.emplace_back([&, t] {
      const Tensor y = net.infer(x);
      outs[t].assign(y.data().begin(), y.data().end());
    });
  }
  for (auto& th : threads) th.join();
  for (const auto& o : outs) CHECK(o == std::vector<double>(ref.data().begin(), ref.data().end()));
}

TEST_CASE("normalised TruKAN stays finite on the toy task") {
  TruKANConfig c;
  c.grid = 3;
  c.pre_norm = true;
  Network net = build_trukan_stack({2, 3, 1}, c);
  const auto ds = data::gen_alignment_target(256, 1);
  train::TrainConfig tc;
  tc.batch_size = 0;
  tc.epochs = 500;
  tc.lr = 0.01;
  tc.loss = train::LossKind::MSE;
  AnomalyGuard guard;
  CHECK_NOTHROW(train::train(net, ds, tc));
  const Tensor y = net.infer(ds.features);
  for (double v : y.data()) CHECK(std::isfinite(v));
}
