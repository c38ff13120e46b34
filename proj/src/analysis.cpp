#include "trukan/analysis.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "trukan/data.hpp"
#include "trukan/error.hpp"
#include "trukan/memory.hpp"
#include "trukan/optim.hpp"
#include "trukan/train.hpp"

namespace trukan::analysis {

using nlohmann::json;

// ---------------------------------------------------------------------------
// Pruning

namespace {

std::vector<double> column(const Tensor& x, std::size_t c) {
  std::vector<double> out(x.rows());
  auto d = x.data();
  for (std::size_t r = 0; r < x.rows(); ++r) out[r] = d[r * x.cols() + c];
  return out;
}

std::vector<EdgeScore> layer_scores(const nn::EdgeLayer& layer, std::size_t index, const Tensor& h) {
  std::vector<EdgeScore> out;
  for (std::size_t i = 0; i < layer.in_dim(); ++i) {
    const auto xs = column(h, i);
    for (std::size_t o = 0; o < layer.out_dim(); ++o) {
      if (!layer.edge_active(i, o)) continue;
      const auto ys = layer.edge_values(i, o, xs);
      double s = 0.0;
      for (double y : ys) s += std::abs(y);
      out.push_back({index, i, o, ys.empty() ? 0.0 : s / static_cast<double>(ys.size())});
    }
  }
  return out;
}

json edge_json(const EdgeScore& e) { return {{"layer", e.layer}, {"in", e.in}, {"out", e.out}, {"score", e.score}}; }

}  // namespace

std::vector<EdgeScore> edge_scores(const nn::Network& net, const Tensor& inputs) {
  NoGradGuard guard;
  std::vector<EdgeScore> all;
  Tensor h = inputs;
  const nn::ForwardContext ctx{false, nullptr};
  for (std::size_t l = 0; l < net.size(); ++l) {
    if (const auto* e = dynamic_cast<const nn::EdgeLayer*>(&net.layer(l))) {
      auto s = layer_scores(*e, l, h);
      all.insert(all.end(), s.begin(), s.end());
    }
    h = net.layer(l).forward(h, ctx);
  }
  return all;
}

PruneReport prune(nn::Network& net, const Tensor& inputs, double threshold) {
  if (!(threshold >= 0.0)) throw ValueError("prune: threshold must be >= 0");
  if (inputs.cols() != net.in_dim()) throw ShapeError("prune: inputs do not match the network input width");
  PruneReport rep;
  rep.threshold = threshold;
  rep.params_before = net.parameter_count();
  rep.reference_before = nn::reference_convention_count(net);
  for (;;) {
    ++rep.passes;
    auto scores = edge_scores(net, inputs);
    // Cut only within the first layer that has anything to cut: later layers
    // are rescored on the inputs they see afterwards.
    auto first = std::find_if(scores.begin(), scores.end(), [&](const EdgeScore& e) { return e.score < threshold; });
    if (first == scores.end()) {
      rep.kept = std::move(scores);
      break;
    }
    const std::size_t layer = first->layer;
    auto& edge = dynamic_cast<nn::EdgeLayer&>(net.layer(layer));
    for (const auto& e : scores)
      if (e.layer == layer && e.score < threshold) {
        edge.remove_edge(e.in, e.out);
        rep.removed.push_back(e);
      }
  }
  rep.params_after = net.parameter_count();
  rep.reference_after = nn::reference_convention_count(net);
  return rep;
}

json PruneReport::to_json() const {
  json removed_j = json::array(), kept_j = json::array();
  for (const auto& e : removed) removed_j.push_back(edge_json(e));
  for (const auto& e : kept) kept_j.push_back(edge_json(e));
  return {{"threshold", threshold},
          {"params_before", params_before},
          {"params_after", params_after},
          {"reference_count_before", reference_before},
          {"reference_count_after", reference_after},
          {"passes", passes},
          {"removed", std::move(removed_j)},
          {"kept", std::move(kept_j)}};
}

// ---------------------------------------------------------------------------
// Curves

bool EdgeFilter::matches(std::size_t l, std::size_t i, std::size_t o) const {
  return (layer < 0 || static_cast<std::size_t>(layer) == l) && (in < 0 || static_cast<std::size_t>(in) == i) &&
         (out < 0 || static_cast<std::size_t>(out) == o);
}

std::vector<ActivationCurve> export_curves(const nn::Network& net, const EdgeFilter& filter, std::size_t n_samples,
                                           double lo, double hi) {
  if (n_samples < 2) throw ValueError("export_curves: need at least two samples");
  if (!(hi > lo)) throw ValueError("export_curves: range must satisfy lo < hi");
  std::vector<double> xs(n_samples);
  for (std::size_t s = 0; s < n_samples; ++s)
    xs[s] = lo + (hi - lo) * static_cast<double>(s) / static_cast<double>(n_samples - 1);
  std::vector<ActivationCurve> curves;
  for (std::size_t l = 0; l < net.size(); ++l) {
    const auto* e = dynamic_cast<const nn::EdgeLayer*>(&net.layer(l));
    if (!e) continue;
    for (std::size_t i = 0; i < e->in_dim(); ++i)
      for (std::size_t o = 0; o < e->out_dim(); ++o) {
        if (!filter.matches(l, i, o)) continue;
        auto parts = e->edge_components(i, o, xs);
        ActivationCurve c{l, i, o, xs, std::vector<double>(n_samples, 0.0), parts.names, std::move(parts.values)};
        for (const auto& comp : c.components)
          for (std::size_t s = 0; s < n_samples; ++s) c.composite[s] += comp[s];
        curves.push_back(std::move(c));
      }
  }
  if (curves.empty()) throw ValueError("export_curves: edge filter matches no edge of a spline-family layer");
  return curves;
}

void write_curves_csv(std::ostream& out, const std::vector<ActivationCurve>& curves) {
  std::vector<std::string> names;
  for (const auto& c : curves)
    for (const auto& n : c.component_names)
      if (std::find(names.begin(), names.end(), n) == names.end()) names.push_back(n);
  data::CsvTable table;
  table.header = {"layer", "in", "out", "x", "composite"};
  table.header.insert(table.header.end(), names.begin(), names.end());
  for (const auto& c : curves)
    for (std::size_t s = 0; s < c.xs.size(); ++s) {
      std::vector<std::string> row{std::to_string(c.layer), std::to_string(c.in), std::to_string(c.out),
                                   data::format_double(c.xs[s]), data::format_double(c.composite[s])};
      for (const auto& n : names) {
        auto it = std::find(c.component_names.begin(), c.component_names.end(), n);
        row.push_back(it == c.component_names.end()
                          ? ""
                          : data::format_double(c.components[static_cast<std::size_t>(it - c.component_names.begin())][s]));
      }
      table.rows.push_back(std::move(row));
    }
  data::write_csv(out, table);
}

std::string curve_svg(const ActivationCurve& c) {
  const double W = 480, H = 320, pad = 40;
  double ymin = INFINITY, ymax = -INFINITY;
  auto widen = [&](const std::vector<double>& v) {
    for (double y : v) {
      ymin = std::min(ymin, y);
      ymax = std::max(ymax, y);
    }
  };
  widen(c.composite);
  for (const auto& comp : c.components) widen(comp);
  if (!(ymax > ymin)) {
    ymin -= 1.0;
    ymax += 1.0;
  }
  const double xmin = c.xs.front(), xmax = c.xs.back();
  auto px = [&](double x) { return pad + (W - 2 * pad) * (x - xmin) / (xmax - xmin); };
  auto py = [&](double y) { return H - pad - (H - 2 * pad) * (y - ymin) / (ymax - ymin); };
  auto polyline = [&](const std::vector<double>& ys, const char* style) {
    std::ostringstream os;
    os << "<polyline fill=\"none\" " << style << " points=\"";
    for (std::size_t s = 0; s < c.xs.size(); ++s) os << (s ? " " : "") << px(c.xs[s]) << ',' << py(ys[s]);
    os << "\"/>\n";
    return os.str();
  };
  static const char* colours[] = {"#1f77b4", "#d62728", "#2ca02c", "#9467bd"};
  std::ostringstream os;
  os << std::setprecision(6);
  os << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 " << W
     << ' ' << H << "\">\n";
  os << "<rect x=\"" << pad << "\" y=\"" << pad << "\" width=\"" << W - 2 * pad << "\" height=\"" << H - 2 * pad
     << "\" fill=\"white\" stroke=\"#888\"/>\n";
  os << "<text x=\"" << pad << "\" y=\"" << pad - 12 << "\" font-family=\"sans-serif\" font-size=\"13\">layer "
     << c.layer << " edge " << c.in << " -&gt; " << c.out << "</text>\n";
  os << "<text x=\"" << pad << "\" y=\"" << H - 12 << "\" font-family=\"sans-serif\" font-size=\"11\">x in [" << xmin
     << ", " << xmax << "], y in [" << ymin << ", " << ymax << "]</text>\n";
  for (std::size_t k = 0; k < c.components.size(); ++k) {
    std::string style = std::string("stroke=\"") + colours[k % 4] + "\" stroke-width=\"1.5\" stroke-dasharray=\"6 4\"";
    os << polyline(c.components[k], style.c_str());
    os << "<text x=\"" << W - pad - 110 << "\" y=\"" << pad + 16 + 14 * static_cast<double>(k)
       << "\" font-family=\"sans-serif\" font-size=\"11\" fill=\"" << colours[k % 4] << "\">" << c.component_names[k]
       << "</text>\n";
  }
  os << polyline(c.composite, "stroke=\"black\" stroke-width=\"2.5\"");
  os << "</svg>\n";
  return os.str();
}

std::vector<std::string> write_curves(const std::string& dir, const std::vector<ActivationCurve>& curves) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> paths;
  const std::string csv = (std::filesystem::path(dir) / "curves.csv").string();
  {
    std::ofstream out(csv, std::ios::binary);
    if (!out) throw Error("cannot write '" + csv + "'");
    write_curves_csv(out, curves);
  }
  paths.push_back(csv);
  for (const auto& c : curves) {
    const auto p = (std::filesystem::path(dir) / ("edge_" + std::to_string(c.layer) + "_" + std::to_string(c.in) +
                                                  "_" + std::to_string(c.out) + ".svg"))
                       .string();
    std::ofstream out(p);
    if (!out) throw Error("cannot write '" + p + "'");
    out << curve_svg(c);
    paths.push_back(p);
  }
  return paths;
}

// ---------------------------------------------------------------------------
// FLOPs

FlopReport flop_breakdown(const nn::Network& net, std::size_t batch) {
  FlopReport rep;
  for (std::size_t l = 0; l < net.size(); ++l) {
    const nn::Layer& layer = net.layer(l);
    LayerFlops f{l, layer.kind(), 0};
    const std::uint64_t in = layer.in_dim(), out = layer.out_dim();
    if (const auto* d = dynamic_cast<const nn::DenseLayer*>(&layer)) {
      f.per_sample = 2 * in * out + (d->has_bias() ? out : 0);
    } else if (const auto* t = dynamic_cast<const nn::TruKANLayer*>(&layer)) {
      const std::uint64_t g = t->config().grid, k = static_cast<std::uint64_t>(t->order());
      f.per_sample = t->active_edges() * (g * (k + 2) + 2 * (k + 1));
      if (t->config().pre_norm) f.per_sample += 8 * in;
      if (t->silu_residual().defined()) f.per_sample += 4 * in + 2 * t->active_edges();
    } else if (const auto* kan = dynamic_cast<const nn::KANLayer*>(&layer)) {
      const std::uint64_t k = static_cast<std::uint64_t>(kan->config().order.value());
      const std::uint64_t combine = kan->config().scale_mode == nn::KanScaleMode::Trainable ? 1 : 3;
      f.per_sample = kan->active_edges() * (7 * k * (k + 1) / 2 + 4 + combine);
    } else if (const auto* s = dynamic_cast<const nn::SineKANLayer*>(&layer)) {
      f.per_sample = s->active_edges() * 5 * s->config().grid + out;
    } else if (layer.kind() == "layer_norm") {
      f.per_sample = 8 * in;
    } else if (layer.kind() == "batch_norm") {
      f.per_sample = 4 * in;
    } else if (layer.kind() == "relu") {
      f.per_sample = in;
    }
    rep.total += f.per_sample * batch;
    rep.layers.push_back(f);
  }
  return rep;
}

std::uint64_t estimate_flops(const nn::Network& net, std::size_t batch) { return flop_breakdown(net, batch).total; }

// ---------------------------------------------------------------------------
// Benchmark

namespace {

struct ModelName {
  BenchModel model;
  const char* name;
};

constexpr ModelName kModels[] = {
    {BenchModel::KAN_PBT, "KAN-PBT"},     {BenchModel::KAN_PBF, "KAN-PBF"},     {BenchModel::SineKAN, "SineKAN"},
    {BenchModel::TruKAN_FS, "TruKAN-FS"}, {BenchModel::TruKAN_FI, "TruKAN-FI"}, {BenchModel::TruKAN_LS, "TruKAN-LS"},
    {BenchModel::TruKAN_LI, "TruKAN-LI"}, {BenchModel::MLP, "MLP"},
};

std::string lower(std::string s) {
  for (char& c : s) c = c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

double median(std::vector<double> v) {
  if (v.empty()) return 0.0;
  std::sort(v.begin(), v.end());
  const std::size_t m = v.size() / 2;
  return v.size() % 2 ? v[m] : 0.5 * (v[m - 1] + v[m]);
}

}  // namespace

std::string to_string(BenchModel m) {
  for (const auto& e : kModels)
    if (e.model == m) return e.name;
  return "?";
}

BenchModel parse_bench_model(const std::string& name) {
  const std::string want = lower(name);
  for (const auto& e : kModels)
    if (lower(e.name) == want) return e.model;
  if (want == "sine" || want == "sine-kan") return BenchModel::SineKAN;
  throw ValueError("unknown bench model '" + name + "'");
}

nn::Network bench_network(BenchModel model, const BenchShape& shape, std::uint64_t seed) {
  nn::Network net;
  net.head = to_string(model);
  switch (model) {
    case BenchModel::KAN_PBT:
    case BenchModel::KAN_PBF: {
      nn::KANConfig c;
      c.in = shape.in;
      c.out = shape.out;
      c.grid = shape.grid;
      c.order = basis::SplineOrder(shape.order);
      c.scale_mode = model == BenchModel::KAN_PBT ? nn::KanScaleMode::Trainable : nn::KanScaleMode::Fixed;
      c.seed = seed;
      net.add(std::make_unique<nn::KANLayer>(c));
      break;
    }
    case BenchModel::SineKAN: {
      nn::SineKANConfig c;
      c.in = shape.in;
      c.out = shape.out;
      c.grid = shape.sine_grid ? shape.sine_grid : shape.grid + static_cast<std::size_t>(shape.order) + 1;
      c.seed = seed;
      net.add(std::make_unique<nn::SineKANLayer>(c));
      break;
    }
    case BenchModel::MLP: net.add(std::make_unique<nn::DenseLayer>(shape.in, shape.out, true, seed)); break;
    default: {
      nn::TruKANConfig c;
      c.in = shape.in;
      c.out = shape.out;
      c.grid = shape.grid;
      c.order = basis::SplineOrder(shape.order);
      c.knot_mode = (model == BenchModel::TruKAN_LS || model == BenchModel::TruKAN_LI) ? basis::KnotMode::Learnable
                                                                                         : basis::KnotMode::Fixed;
      c.sharing = (model == BenchModel::TruKAN_FI || model == BenchModel::TruKAN_LI) ? basis::KnotSharing::Individual
                                                                                       : basis::KnotSharing::Shared;
      c.seed = seed;
      net.add(std::make_unique<nn::TruKANLayer>(c));
    }
  }
  return net;
}

BenchReport bench_one(BenchModel model, const BenchShape& shape, const BenchOptions& opts) {
  if (opts.warmup_steps < 1) throw ValueError("bench: insufficient warmup (need at least one warmup step)");
  if (opts.trials < 5) throw ValueError("bench: the protocol needs at least five trials");
  if (opts.steps_per_trial < 1) throw ValueError("bench: need at least one measured step per trial");
  nn::Network net = bench_network(model, shape, opts.seed);
  std::mt19937_64 rng(opts.seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  Buffer xb(shape.batch * shape.in), yb(shape.batch * shape.out);
  for (double& v : xb) v = u(rng);
  for (double& v : yb) v = u(rng);
  const Tensor x = Tensor::adopt({shape.batch, shape.in}, std::move(xb));
  const Tensor y = Tensor::adopt({shape.batch, shape.out}, std::move(yb));
  optim::AdamW opt(optim::make_param_groups(net, 1e-4, 1e-4));

  BenchReport rep;
  rep.model = to_string(model);
  rep.parameters = net.parameter_count();
  rep.flops = estimate_flops(net, shape.batch);
  rep.trials = opts.trials;
  rep.threads = static_cast<std::size_t>(Eigen::nbThreads());

  auto step = [&] {
    const auto base = memory::current_bytes();
    memory::reset_peak();
    const auto t0 = std::chrono::steady_clock::now();
    net.zero_grad();
    Tensor loss = train::mse_loss(net.forward(x, true), y);
    backward(loss);
    opt.step();
    const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
    return std::pair<double, std::uint64_t>{ms, memory::peak_bytes() - base};
  };

  for (std::size_t w = 0; w < opts.warmup_steps; ++w) step();
  std::vector<double> all;
  for (std::size_t t = 0; t < opts.trials; ++t) {
    std::vector<double> times;
    for (std::size_t s = 0; s < opts.steps_per_trial; ++s) {
      auto [ms, bytes] = step();
      times.push_back(ms);
      rep.peak_bytes = std::max<std::uint64_t>(rep.peak_bytes, bytes);
    }
    rep.trial_median_ms.push_back(median(times));
    all.insert(all.end(), times.begin(), times.end());
  }
  rep.measured_steps = all.size();
  rep.mean_ms = std::accumulate(all.begin(), all.end(), 0.0) / static_cast<double>(all.size());
  rep.median_ms = median(all);
  return rep;
}

std::vector<BenchReport> bench(const std::vector<BenchModel>& models, const BenchShape& shape,
                               const BenchOptions& opts) {
  std::vector<BenchReport> out;
  for (auto m : models) out.push_back(bench_one(m, shape, opts));
  return out;
}

void write_bench_csv(std::ostream& out, const std::vector<BenchReport>& reports) {
  out << "model,parameters,mean_step_ms,median_step_ms,forward_flops,peak_transient_bytes,trials,measured_steps,"
         "threads\n";
  for (const auto& r : reports) {
    out << r.model << ',' << r.parameters << ',' << data::format_double(r.mean_ms) << ','
        << data::format_double(r.median_ms) << ',' << r.flops << ',' << r.peak_bytes << ',' << r.trials << ','
        << r.measured_steps << ',' << r.threads << '\n';
  }
}

json bench_json(const std::vector<BenchReport>& reports, const BenchShape& shape, const BenchOptions& opts) {
  json rows = json::array();
  for (const auto& r : reports) {
    rows.push_back({{"model", r.model},
                    {"parameters", r.parameters},
                    {"mean_step_ms", r.mean_ms},
                    {"median_step_ms", r.median_ms},
                    {"trial_median_ms", r.trial_median_ms},
                    {"forward_flops", r.flops},
                    {"peak_transient_bytes", r.peak_bytes},
                    {"trials", r.trials},
                    {"measured_steps", r.measured_steps},
                    {"threads", r.threads}});
  }
  return {{"format", "trukan-bench"},
          {"version", kBenchSchemaVersion},
          {"shape",
           {{"in", shape.in}, {"out", shape.out}, {"batch", shape.batch}, {"grid", shape.grid}, {"order", shape.order}}},
          {"protocol",
           {{"trials", opts.trials}, {"warmup_steps", opts.warmup_steps}, {"steps_per_trial", opts.steps_per_trial}}},
          {"models", std::move(rows)}};
}

std::string bench_table(const std::vector<BenchReport>& reports) {
  std::ostringstream os;
  os << std::left << std::setw(11) << "model" << std::right << std::setw(12) << "params" << std::setw(14)
     << "median ms" << std::setw(12) << "mean ms" << std::setw(14) << "GFLOPs" << std::setw(12) << "peak MB" << '\n';
  for (const auto& r : reports) {
    os << std::left << std::setw(11) << r.model << std::right << std::setw(12) << r.parameters << std::setw(14)
       << std::fixed << std::setprecision(2) << r.median_ms << std::setw(12) << r.mean_ms << std::setw(14)
       << std::setprecision(4) << static_cast<double>(r.flops) / 1e9 << std::setw(12) << std::setprecision(2)
       << static_cast<double>(r.peak_bytes) / 1e6 << '\n';
  }
  return os.str();
}

}  // namespace trukan::analysis
