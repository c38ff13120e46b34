#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "trukan/analysis.hpp"
#include "trukan/data.hpp"
#include "trukan/error.hpp"
#include "trukan/train.hpp"

using namespace trukan;
using namespace trukan::analysis;

namespace {

nn::Network trained_toy(std::size_t epochs = 200) {
  nn::TruKANConfig c;
  c.grid = 3;
  auto net = nn::build_trukan_stack({2, 3, 1}, c);
  const auto ds = data::gen_alignment_target(300, 0);
  train::TrainConfig tc;
  tc.batch_size = 0;
  tc.epochs = epochs;
  tc.lr = 0.05;
  tc.loss = train::LossKind::MSE;
  train::train(net, ds, tc);
  return net;
}

}  // namespace

TEST_CASE("pruning extremes") {
  const auto x = data::gen_alignment_target(300, 1).features;
  auto net = trained_toy();
  const auto before = net.parameter_count();
  const auto r0 = prune(net, x, 0.0);
  CHECK(r0.removed.empty());
  CHECK(net.parameter_count() == before);

  auto all = trained_toy();
  const auto rinf = prune(all, x, 1e300);
  CHECK(rinf.params_after == 0);
  CHECK(rinf.removed.size() == 9);

  nn::ClassifierHparams hp;
  auto cls = nn::build_classifier(nn::HeadKind::TruKAN_SN, 2, 4, 3, hp);
  prune(cls, x, 1e300);
  CHECK(cls.parameter_count() == 2 * 2 + 2 * 4);  // batch norm and layer norm affine
  CHECK_THROWS_AS(prune(cls, x, -1.0), ValueError);
}

TEST_CASE("pruning properties") {
  const auto x = data::gen_alignment_target(300, 1).features;
  const auto base = trained_toy();
  std::size_t prev = base.parameter_count();
  for (double tau : {0.0, 0.05, 0.1, 0.3, 0.6, 1.0, 2.0, 5.0}) {
    auto net = base;
    const auto rep = prune(net, x, tau);
    CHECK(rep.params_after <= rep.params_before);
    CHECK(rep.params_after <= prev);
    prev = rep.params_after;
    for (const auto& e : rep.removed) CHECK(e.score < tau);
    for (const auto& e : rep.kept) CHECK(e.score >= tau);
    const auto again = prune(net, x, tau);
    CHECK(again.removed.empty());
    CHECK(again.params_after == rep.params_after);
  }
}

TEST_CASE("curves decompose and re-evaluate") {
  nn::TruKANConfig c;
  c.in = 1;
  c.out = 1;
  c.grid = 5;
  nn::Network net;
  net.add(std::make_unique<nn::TruKANLayer>(c));
  std::mt19937_64 rng(2);
  std::normal_distribution<double> n(0.0, 0.7);
  for (auto& p : net.parameters())
    for (double& v : p.tensor.data_mut()) v = n(rng);

  const auto curves = export_curves(net, {}, 101, -1.0, 1.0);
  REQUIRE(curves.size() == 1);
  const auto& cv = curves[0];
  CHECK(cv.component_names == std::vector<std::string>{"poly", "trunc"});
  for (std::size_t s = 0; s < cv.xs.size(); ++s) {
    CHECK(std::abs(cv.composite[s] - (cv.components[0][s] + cv.components[1][s])) < 1e-10);
  }

  std::ostringstream out;
  write_curves_csv(out, curves);
  std::istringstream in(out.str());
  const auto table = data::parse_csv(in);
  CHECK(table.header[3] == "x");
  std::vector<double> xs, ys;
  for (const auto& row : table.rows) {
    xs.push_back(std::stod(row[3]));
    ys.push_back(std::stod(row[4]));
  }
  const Tensor y = net.infer(Tensor::from(xs.size(), 1, xs));
  for (std::size_t s = 0; s < xs.size(); ++s) CHECK(std::abs(y.data()[s] - ys[s]) < 1e-10);

  CHECK_THROWS_AS(export_curves(net, {3, -1, -1}, 10, -1.0, 1.0), ValueError);
}

TEST_CASE("zero-coefficient edge gives flat zero curves") {
  nn::TruKANConfig c;
  c.in = 2;
  c.out = 2;
  c.grid = 4;
  nn::Network net;
  net.add(std::make_unique<nn::TruKANLayer>(c));
  dynamic_cast<nn::EdgeLayer&>(net.layer(0)).remove_edge(1, 0);
  const auto curves = export_curves(net, {0, 1, 0}, 50, -1.0, 1.0);
  REQUIRE(curves.size() == 1);
  for (double v : curves[0].composite) CHECK(v == 0.0);
  for (const auto& comp : curves[0].components)
    for (double v : comp) CHECK(v == 0.0);
}

TEST_CASE("curve files") {
  const auto dir = std::filesystem::temp_directory_path() / "trukan_curve_test";
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  const auto net = trained_toy(5);
  const auto paths = write_curves(dir.string(), export_curves(net, {1, -1, -1}, 20, -1.0, 1.0));
  CHECK(paths.size() == 4);  // csv + three edges
  std::ifstream svg(dir / "edge_1_2_0.svg");
  std::stringstream ss;
  ss << svg.rdbuf();
  CHECK(ss.str().find("<svg") != std::string::npos);
  std::filesystem::remove_all(dir);
}

TEST_CASE("FLOP sheet") {
  nn::Network dense;
  dense.add(std::make_unique<nn::DenseLayer>(10, 5, false));
  CHECK(estimate_flops(dense, 1) == 100);
  CHECK(estimate_flops(dense, 2) == 200);

  BenchShape shape;
  shape.in = 16;
  shape.out = 8;
  const auto f = [&](BenchModel m) { return estimate_flops(bench_network(m, shape), 4); };
  CHECK(f(BenchModel::KAN_PBT) < f(BenchModel::KAN_PBF));
  CHECK(f(BenchModel::TruKAN_FS) > f(BenchModel::KAN_PBT));
  CHECK(f(BenchModel::TruKAN_FS) <= f(BenchModel::TruKAN_FI));
  const double ratio = static_cast<double>(f(BenchModel::TruKAN_FS)) / static_cast<double>(f(BenchModel::KAN_PBF));
  CHECK(std::abs(ratio - 1.0) < 0.05);
  // Per edge per sample: G (k+2) + 2 (k+1) plus one bias add per output.
  CHECK(f(BenchModel::TruKAN_FS) == 4 * (16 * 8 * (8 * 5 + 8)));
  for (BenchModel m : {BenchModel::KAN_PBT, BenchModel::SineKAN, BenchModel::TruKAN_FI, BenchModel::MLP}) {
    const auto net = bench_network(m, shape);
    CHECK(estimate_flops(net, 7) == 7 * estimate_flops(net, 1));
    CHECK(estimate_flops(net, 3) == estimate_flops(net, 3));
  }
}

TEST_CASE("bench harness") {
  BenchShape shape;
  shape.in = 32;
  shape.out = 16;
  shape.batch = 32;
  BenchOptions o;
  o.warmup_steps = 0;
  CHECK_THROWS_AS(bench_one(BenchModel::TruKAN_FS, shape, o), ValueError);
  o.warmup_steps = 3;
  o.trials = 4;
  CHECK_THROWS_AS(bench_one(BenchModel::TruKAN_FS, shape, o), ValueError);
  o.trials = 5;
  o.steps_per_trial = 20;
  const auto a = bench_one(BenchModel::TruKAN_FS, shape, o);
  const auto b = bench_one(BenchModel::TruKAN_FS, shape, o);
  CHECK(a.trials == 5);
  CHECK(a.measured_steps == 100);
  CHECK(a.peak_bytes > 0);
  CHECK(a.threads >= 1);
  CHECK(std::abs(a.median_ms / b.median_ms - 1.0) < 0.2);

  const std::vector<BenchReport> reps{a};
  std::ostringstream csv;
  write_bench_csv(csv, reps);
  CHECK(csv.str().find("TruKAN-FS") != std::string::npos);
  const auto j = bench_json(reps, shape, o);
  CHECK(j.at("version") == kBenchSchemaVersion);
  CHECK(j.at("models").size() == 1);
  CHECK(parse_bench_model("trukan-fi") == BenchModel::TruKAN_FI);
  CHECK_THROWS_AS(parse_bench_model("gpt"), ValueError);
}
