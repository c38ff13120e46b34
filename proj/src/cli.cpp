#include "trukan/cli.hpp"

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>

#include <CLI11.hpp>

#include "trukan/analysis.hpp"
#include "trukan/convert.hpp"
#include "trukan/data.hpp"
#include "trukan/error.hpp"
#include "trukan/grad_suite.hpp"
#include "trukan/network.hpp"
#include "trukan/train.hpp"

namespace trukan::cli {

using nlohmann::json;
namespace fs = std::filesystem;

json default_config() {
  return json{
      {"model",
       {{"arch", "classifier"},  // classifier | trukan-stack | kan-stack
        {"head", "TruKAN-S"},
        {"hidden", 0u},
        {"reference_hidden", 256u},
        {"widths", json::array({2u, 3u, 1u})},
        {"grid", 8u},
        {"order", 3u},
        {"lo", -1.0},
        {"hi", 1.0},
        {"knot_mode", "fixed"},
        {"sharing", "shared"},
        {"pre_norm", false},
        {"kan_scale", "trainable"},
        {"dropout", 0.1}}},
      {"data",
       {{"source", "blobs"},  // blobs | alignment | csv
        {"n", 5000u},
        {"features", 32u},
        {"classes", 10u},
        {"separation", 1.0},
        {"train_fraction", 0.8},
        {"standardize", true},
        {"csv",
         {{"train", ""},
          {"test", ""},
          {"target_columns", json::array()},
          {"feature_columns", json::array()},
          {"classification", true},
          {"labels", json::array()}}}}},
      {"train",
       {{"seed", 0u},
        {"batch_size", 512u},
        {"epochs", 30u},
        {"max_steps", 0u},
        {"lr", 5e-4},
        {"lr_preset", "table"},
        {"use_preset", false},
        {"weight_decay", 1e-4},
        {"warmup_epochs", 10.0},
        {"min_lr", 1e-5},
        {"schedule", true},
        {"lookahead", true},
        {"lookahead_k", 5u},
        {"lookahead_alpha", 0.5},
        {"loss", "cross-entropy"}}},
      {"eval", {{"checkpoint", ""}}},
      {"prune", {{"checkpoint", ""}, {"threshold", 0.3}}},
      {"curves",
       {{"checkpoint", ""}, {"layer", -1}, {"in", -1}, {"out", -1}, {"samples", 200u}, {"lo", -1.0}, {"hi", 1.0}}},
      {"bench",
       {{"heads", json::array({"kan-pbt", "kan-pbf", "sinekan", "trukan-fs", "trukan-fi"})},
        {"in", 512u},
        {"out", 256u},
        {"batch", 512u},
        {"grid", 8u},
        {"order", 3u},
        {"sine_grid", 0u},
        {"trials", 5u},
        {"warmup", 20u},
        {"steps_per_trial", 20u}}},
      {"gradcheck", {{"trials", 100u}, {"tolerance", 1e-4}, {"cases", json::array()}}},
      {"convert", {{"checkpoint", ""}, {"samples", 1000u}, {"refinements", 3u}}},
  };
}

namespace {

std::string join_path(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

const char* type_label(const json& v) {
  switch (v.type()) {
    case json::value_t::boolean: return "a boolean";
    case json::value_t::number_unsigned: return "a non-negative integer";
    case json::value_t::number_integer: return "an integer";
    case json::value_t::number_float: return "a number";
    case json::value_t::string: return "a string";
    case json::value_t::array: return "an array";
    case json::value_t::object: return "an object";
    default: return "a value";
  }
}

bool same_kind(const json& def, const json& v) {
  switch (def.type()) {
    case json::value_t::number_unsigned: return v.is_number_unsigned();
    case json::value_t::number_integer: return v.is_number_integer();
    case json::value_t::number_float: return v.is_number();
    default: return def.type() == v.type();
  }
}

void check_value(const json& def, const json& v, const std::string& path) {
  if (!same_kind(def, v)) {
    throw FormatError("config key '" + path + "' must be " + type_label(def) + ", got " + v.dump());
  }
  if (def.is_array()) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      const std::string p = path + "[" + std::to_string(i) + "]";
      if (!def.empty()) {
        check_value(def.front(), v[i], p);
      } else if (!v[i].is_string()) {
        throw FormatError("config key '" + p + "' must be a string, got " + v[i].dump());
      }
    }
  }
}

}  // namespace

void merge_config(json& base, const json& patch, const std::string& path) {
  if (!patch.is_object()) throw FormatError("config " + (path.empty() ? "root" : "key '" + path + "'") + " must be an object");
  const json defaults = default_config();
  const json* def = &defaults;
  if (!path.empty()) {
    std::string ptr;
    for (std::size_t s = 0, e; s <= path.size(); s = e + 1) {
      e = path.find('.', s);
      if (e == std::string::npos) e = path.size();
      ptr += "/" + path.substr(s, e - s);
    }
    def = &defaults.at(json::json_pointer(ptr));
  }
  for (const auto& [key, value] : patch.items()) {
    const std::string p = join_path(path, key);
    if (!def->contains(key)) throw FormatError("unknown config key '" + p + "'");
    const json& d = (*def)[key];
    if (d.is_object()) {
      merge_config(base[key], value, p);
    } else {
      check_value(d, value, p);
      base[key] = value;
    }
  }
}

void apply_override(json& config, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) throw FormatError("override '" + assignment + "' is not key=value");
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  json value = json::parse(text, nullptr, false);
  if (value.is_discarded()) value = text;
  json patch = value;
  for (auto e = key.size(); e != std::string::npos;) {
    const auto s = key.rfind('.', e == key.size() ? std::string::npos : e - 1);
    const std::string part = s == std::string::npos ? key.substr(0, e) : key.substr(s + 1, e - s - 1);
    if (part.empty()) throw FormatError("override key '" + key + "' has an empty component");
    patch = json{{part, std::move(patch)}};
    if (s == std::string::npos) break;
    e = s;
  }
  merge_config(config, patch);
}

namespace {

// ---------------------------------------------------------------------------
// Logging

class Logger {
 public:
  Logger(std::ostream& sink, bool json_lines, int verbosity) : sink_(sink), json_(json_lines), verbosity_(verbosity) {}

  void info(const std::string& event, const json& fields = json::object()) const { emit("info", event, fields, 0); }
  void debug(const std::string& event, const json& fields = json::object()) const { emit("debug", event, fields, 1); }
  void error(const std::string& message) const { emit("error", "error", {{"message", message}}, -1); }

 private:
  void emit(const char* level, const std::string& event, const json& fields, int min_verbosity) const {
    if (verbosity_ < min_verbosity) return;
    if (json_) {
      json line = {{"level", level}, {"event", event}};
      for (const auto& [k, v] : fields.items()) line[k] = v;
      sink_ << line.dump() << '\n';
      return;
    }
    sink_ << '[' << level << "] " << event;
    for (const auto& [k, v] : fields.items()) sink_ << ' ' << k << '=' << (v.is_string() ? v.get<std::string>() : v.dump());
    sink_ << '\n';
  }

  std::ostream& sink_;
  bool json_;
  int verbosity_;
};

// ---------------------------------------------------------------------------
// Run context and artifacts

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw FormatError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

struct Context {
  std::string command;
  json config;
  fs::path out_dir;
  Logger* log = nullptr;
  std::ostream* out = nullptr;
  std::map<std::string, std::string> files;  // name -> hash
  json deterministic = json::object();

  fs::path write(const std::string& name, const std::string& contents) {
    const fs::path p = out_dir / name;
    std::ofstream f(p, std::ios::binary);
    f << contents;
    if (!f) throw Error("cannot write '" + p.string() + "'");
    files[name] = nn::fnv1a_hex(contents);
    return p;
  }
  void record_file(const fs::path& p) { files[fs::relative(p, out_dir).generic_string()] = nn::fnv1a_hex(read_file(p)); }

  void write_manifest() {
    json m = {{"format", "trukan-manifest"},
              {"version", 1},
              {"command", command},
              {"config_hash", nn::fnv1a_hex(config.dump())},
              {"files", files},
              {"deterministic", deterministic},
              {"deterministic_hash", nn::fnv1a_hex(deterministic.dump())}};
    write("manifest.json", m.dump(2) + "\n");
  }
};

template <class T>
T cfg(const json& c, const std::string& ptr) {
  return c.at(json::json_pointer(ptr)).get<T>();
}

std::string hash_doubles(const std::vector<double>& xs) {
  std::string s;
  for (double x : xs) s += data::format_double(x) + "\n";
  return nn::fnv1a_hex(s);
}

basis::KnotMode parse_knot_mode(const std::string& s) {
  if (s == "fixed") return basis::KnotMode::Fixed;
  if (s == "learnable") return basis::KnotMode::Learnable;
  throw ValueError("model.knot_mode must be 'fixed' or 'learnable', got '" + s + "'");
}

basis::KnotSharing parse_sharing(const std::string& s) {
  if (s == "shared") return basis::KnotSharing::Shared;
  if (s == "individual") return basis::KnotSharing::Individual;
  throw ValueError("model.sharing must be 'shared' or 'individual', got '" + s + "'");
}

nn::KanScaleMode parse_kan_scale(const std::string& s) {
  if (s == "trainable" || s == "pbt") return nn::KanScaleMode::Trainable;
  if (s == "fixed" || s == "pbf") return nn::KanScaleMode::Fixed;
  throw ValueError("model.kan_scale must be 'trainable' or 'fixed', got '" + s + "'");
}

basis::SplineOrder order_of(const json& c, const std::string& ptr) {
  return basis::SplineOrder(static_cast<int>(cfg<unsigned>(c, ptr)));
}

// ---------------------------------------------------------------------------
// Data and models

struct Splits {
  data::Dataset train;
  std::optional<data::Dataset> test;
};

Splits load_data(const json& c) {
  const auto seed = cfg<std::uint64_t>(c, "/train/seed");
  const auto source = cfg<std::string>(c, "/data/source");
  const double frac = cfg<double>(c, "/data/train_fraction");
  if (!(frac > 0.0 && frac <= 1.0)) throw ValueError("data.train_fraction must be in (0, 1]");
  data::Dataset all;
  std::optional<data::Dataset> test;
  if (source == "blobs") {
    all = data::gen_blobs(cfg<std::size_t>(c, "/data/n"), cfg<std::size_t>(c, "/data/features"),
                          cfg<std::size_t>(c, "/data/classes"), seed, cfg<double>(c, "/data/separation"));
  } else if (source == "alignment") {
    all = data::gen_alignment_target(cfg<std::size_t>(c, "/data/n"), seed);
  } else if (source == "csv") {
    data::CsvSchema schema;
    schema.target_columns = cfg<std::vector<std::string>>(c, "/data/csv/target_columns");
    schema.feature_columns = cfg<std::vector<std::string>>(c, "/data/csv/feature_columns");
    schema.classification = cfg<bool>(c, "/data/csv/classification");
    schema.labels = cfg<std::vector<std::string>>(c, "/data/csv/labels");
    const auto train_path = cfg<std::string>(c, "/data/csv/train");
    if (train_path.empty()) throw ValueError("data.csv.train must name a CSV file");
    all = data::load_csv(train_path, schema);
    const auto test_path = cfg<std::string>(c, "/data/csv/test");
    if (!test_path.empty()) {
      if (schema.classification && schema.labels.empty()) schema.labels = all.class_names;
      test = data::load_csv(test_path, schema);
    }
  } else {
    throw ValueError("data.source must be 'blobs', 'alignment' or 'csv', got '" + source + "'");
  }
  Splits s;
  if (!test && frac < 1.0) {
    auto [a, b] = data::train_test_split(all, frac, seed);
    s.train = std::move(a);
    s.test = std::move(b);
  } else {
    s.train = std::move(all);
    s.test = std::move(test);
  }
  if (cfg<bool>(c, "/data/standardize")) {
    std::vector<data::Dataset*> others;
    if (s.test) others.push_back(&*s.test);
    data::standardize(s.train, others, cfg<double>(c, "/model/lo"), cfg<double>(c, "/model/hi"));
  }
  return s;
}

std::size_t output_dim(const data::Dataset& ds) { return ds.is_classification() ? ds.num_classes : ds.targets.cols(); }

nn::Network build_model(const json& c, const data::Dataset& ds) {
  const auto arch = cfg<std::string>(c, "/model/arch");
  const auto seed = cfg<std::uint64_t>(c, "/train/seed");
  if (arch == "classifier") {
    if (!ds.is_classification()) throw ValueError("model.arch 'classifier' needs a classification dataset");
    nn::ClassifierHparams hp;
    hp.grid = cfg<std::size_t>(c, "/model/grid");
    hp.order = order_of(c, "/model/order");
    hp.lo = cfg<double>(c, "/model/lo");
    hp.hi = cfg<double>(c, "/model/hi");
    hp.dropout = cfg<double>(c, "/model/dropout");
    hp.kan_scale = parse_kan_scale(cfg<std::string>(c, "/model/kan_scale"));
    hp.knot_mode = parse_knot_mode(cfg<std::string>(c, "/model/knot_mode"));
    hp.reference_hidden = cfg<std::size_t>(c, "/model/reference_hidden");
    hp.seed = seed;
    return nn::build_classifier(nn::parse_head_kind(cfg<std::string>(c, "/model/head")), ds.dim(),
                                cfg<std::size_t>(c, "/model/hidden"), ds.num_classes, hp);
  }
  const auto widths = cfg<std::vector<std::size_t>>(c, "/model/widths");
  if (widths.size() < 2) throw ValueError("model.widths needs at least two entries");
  if (widths.front() != ds.dim()) {
    throw ValueError("model.widths[0] is " + std::to_string(widths.front()) + " but the data has " +
                     std::to_string(ds.dim()) + " features");
  }
  if (widths.back() != output_dim(ds)) {
    throw ValueError("model.widths ends in " + std::to_string(widths.back()) + " but the data needs " +
                     std::to_string(output_dim(ds)) + " outputs");
  }
  if (arch == "trukan-stack") {
    nn::TruKANConfig t;
    t.grid = cfg<std::size_t>(c, "/model/grid");
    t.order = order_of(c, "/model/order");
    t.lo = cfg<double>(c, "/model/lo");
    t.hi = cfg<double>(c, "/model/hi");
    t.knot_mode = parse_knot_mode(cfg<std::string>(c, "/model/knot_mode"));
    t.sharing = parse_sharing(cfg<std::string>(c, "/model/sharing"));
    t.pre_norm = cfg<bool>(c, "/model/pre_norm");
    t.seed = seed;
    return nn::build_trukan_stack(widths, t);
  }
  if (arch == "kan-stack") {
    nn::KANConfig k;
    k.grid = cfg<std::size_t>(c, "/model/grid");
    k.order = order_of(c, "/model/order");
    k.lo = cfg<double>(c, "/model/lo");
    k.hi = cfg<double>(c, "/model/hi");
    k.scale_mode = parse_kan_scale(cfg<std::string>(c, "/model/kan_scale"));
    k.seed = seed;
    return nn::build_kan_stack(widths, k);
  }
  throw ValueError("model.arch must be 'classifier', 'trukan-stack' or 'kan-stack', got '" + arch + "'");
}

train::TrainConfig train_config(const json& c) {
  train::TrainConfig t;
  t.seed = cfg<std::uint64_t>(c, "/train/seed");
  t.batch_size = cfg<std::size_t>(c, "/train/batch_size");
  t.epochs = cfg<std::size_t>(c, "/train/epochs");
  t.max_steps = cfg<std::size_t>(c, "/train/max_steps");
  t.lr = cfg<double>(c, "/train/lr");
  t.lr_preset = optim::parse_lr_preset(cfg<std::string>(c, "/train/lr_preset"));
  t.use_preset = cfg<bool>(c, "/train/use_preset");
  t.weight_decay = cfg<double>(c, "/train/weight_decay");
  t.warmup_epochs = cfg<double>(c, "/train/warmup_epochs");
  t.min_lr = cfg<double>(c, "/train/min_lr");
  t.schedule = cfg<bool>(c, "/train/schedule");
  t.lookahead = cfg<bool>(c, "/train/lookahead");
  t.lookahead_k = cfg<std::size_t>(c, "/train/lookahead_k");
  t.lookahead_alpha = cfg<double>(c, "/train/lookahead_alpha");
  t.loss = train::parse_loss_kind(cfg<std::string>(c, "/train/loss"));
  return t;
}

json evaluation_json(const train::Evaluation& e, bool classification) {
  json j = {{"loss", e.loss}};
  if (classification) {
    j["accuracy"] = e.metrics.accuracy;
    j["macro_f1"] = e.metrics.macro_f1;
  } else {
    j["rmse"] = e.rmse;
  }
  return j;
}

json evaluate_splits(const nn::Network& net, const Splits& s, train::LossKind loss) {
  if (net.in_dim() != s.train.dim()) {
    throw ValueError("checkpoint expects " + std::to_string(net.in_dim()) + " features but the data has " +
                     std::to_string(s.train.dim()));
  }
  json m = {{"train", evaluation_json(train::evaluate(net, s.train, loss), s.train.is_classification())}};
  if (s.test) m["test"] = evaluation_json(train::evaluate(net, *s.test, loss), s.test->is_classification());
  return m;
}

// ---------------------------------------------------------------------------
// Subcommands

int cmd_train(Context& ctx) {
  const json& c = ctx.config;
  const Splits s = load_data(c);
  nn::Network net = build_model(c, s.train);
  net.meta["config"] = {{"data", c.at("data")}, {"model", c.at("model")}, {"train", c.at("train")}};
  const auto tc = train_config(c);
  if (tc.loss == train::LossKind::CrossEntropy && !s.train.is_classification()) {
    throw ValueError("train.loss 'cross-entropy' needs a classification dataset; use 'mse'");
  }
  ctx.log->info("train.start", {{"head", net.head},
                                {"parameters", net.parameter_count()},
                                {"rows", s.train.rows()},
                                {"epochs", tc.epochs}});
  const Logger& log = *ctx.log;
  const auto tlog = train::train(net, s.train, tc, [&log](const train::StepRecord& r) {
    log.debug("train.step", {{"step", r.step}, {"epoch", r.epoch}, {"lr", r.lr}, {"loss", r.loss}});
  });

  json metrics = evaluate_splits(net, s, tc.loss);
  metrics["final_loss"] = tlog.final_loss();
  metrics["steps"] = tlog.steps.size();
  metrics["parameters"] = net.parameter_count();
  metrics["flops_per_sample"] = analysis::estimate_flops(net, 1);

  nn::save_checkpoint(net, (ctx.out_dir / "checkpoint.json").string());
  ctx.record_file(ctx.out_dir / "checkpoint.json");
  std::ostringstream jl;
  tlog.write_jsonl(jl);
  ctx.write("train_log.jsonl", jl.str());
  ctx.write("metrics.json", metrics.dump(2) + "\n");

  ctx.deterministic = {{"checkpoint_hash", nn::checkpoint_hash(net)},
                       {"losses_hash", hash_doubles(tlog.losses())},
                       {"final_loss", tlog.final_loss()},
                       {"metrics", metrics}};
  ctx.log->info("train.done", {{"final_loss", tlog.final_loss()}, {"metrics", metrics}});
  *ctx.out << metrics.dump(2) << '\n';
  return kExitOk;
}

nn::Network load_required(const json& c, const std::string& ptr, const std::string& key) {
  const auto path = cfg<std::string>(c, ptr);
  if (path.empty()) throw ValueError(key + " must name a checkpoint (use --checkpoint)");
  return nn::load_checkpoint(path);
}

int cmd_eval(Context& ctx) {
  const nn::Network net = load_required(ctx.config, "/eval/checkpoint", "eval.checkpoint");
  const Splits s = load_data(ctx.config);
  const auto loss = s.train.is_classification() ? train::LossKind::CrossEntropy : train::LossKind::MSE;
  json metrics = evaluate_splits(net, s, loss);
  metrics["parameters"] = net.parameter_count();
  metrics["reference_parameters"] = nn::reference_convention_count(net);
  metrics["flops_per_sample"] = analysis::estimate_flops(net, 1);
  ctx.write("metrics.json", metrics.dump(2) + "\n");
  ctx.deterministic = {{"checkpoint_hash", nn::checkpoint_hash(net)}, {"metrics", metrics}};
  *ctx.out << metrics.dump(2) << '\n';
  return kExitOk;
}

int cmd_prune(Context& ctx) {
  nn::Network net = load_required(ctx.config, "/prune/checkpoint", "prune.checkpoint");
  const Splits s = load_data(ctx.config);
  const double tau = cfg<double>(ctx.config, "/prune/threshold");
  if (!(tau >= 0.0)) throw ValueError("prune.threshold must be >= 0");
  const auto report = analysis::prune(net, s.train.features, tau);
  const json rj = report.to_json();
  nn::save_checkpoint(net, (ctx.out_dir / "checkpoint.json").string());
  ctx.record_file(ctx.out_dir / "checkpoint.json");
  ctx.write("prune_report.json", rj.dump(2) + "\n");
  ctx.deterministic = {{"checkpoint_hash", nn::checkpoint_hash(net)}, {"report", rj}};
  ctx.log->info("prune.done", {{"removed", report.removed.size()},
                               {"params_before", report.params_before},
                               {"params_after", report.params_after}});
  *ctx.out << "removed " << report.removed.size() << " edges; parameters " << report.params_before << " -> "
           << report.params_after << " (reference convention " << report.reference_before << " -> "
           << report.reference_after << ")\n";
  return kExitOk;
}

int cmd_curves(Context& ctx) {
  const json& c = ctx.config;
  const nn::Network net = load_required(c, "/curves/checkpoint", "curves.checkpoint");
  analysis::EdgeFilter f;
  f.layer = cfg<long>(c, "/curves/layer");
  f.in = cfg<long>(c, "/curves/in");
  f.out = cfg<long>(c, "/curves/out");
  const auto curves = analysis::export_curves(net, f, cfg<std::size_t>(c, "/curves/samples"),
                                              cfg<double>(c, "/curves/lo"), cfg<double>(c, "/curves/hi"));
  const auto paths = analysis::write_curves(ctx.out_dir.string(), curves);
  json hashes = json::object();
  for (const auto& p : paths) {
    ctx.record_file(p);
    hashes[fs::path(p).filename().string()] = ctx.files[fs::relative(p, ctx.out_dir).generic_string()];
  }
  ctx.deterministic = {{"edges", curves.size()}, {"files", hashes}};
  *ctx.out << "exported " << curves.size() << " edge curves to " << ctx.out_dir.string() << '\n';
  return kExitOk;
}

int cmd_bench(Context& ctx) {
  const json& c = ctx.config;
  std::vector<analysis::BenchModel> models;
  for (const auto& h : cfg<std::vector<std::string>>(c, "/bench/heads")) models.push_back(analysis::parse_bench_model(h));
  if (models.empty()) throw ValueError("bench.heads is empty");
  analysis::BenchShape shape;
  shape.in = cfg<std::size_t>(c, "/bench/in");
  shape.out = cfg<std::size_t>(c, "/bench/out");
  shape.batch = cfg<std::size_t>(c, "/bench/batch");
  shape.grid = cfg<std::size_t>(c, "/bench/grid");
  shape.order = static_cast<int>(cfg<unsigned>(c, "/bench/order"));
  shape.sine_grid = cfg<std::size_t>(c, "/bench/sine_grid");
  analysis::BenchOptions opts;
  opts.trials = cfg<std::size_t>(c, "/bench/trials");
  opts.warmup_steps = cfg<std::size_t>(c, "/bench/warmup");
  opts.steps_per_trial = cfg<std::size_t>(c, "/bench/steps_per_trial");
  opts.seed = cfg<std::uint64_t>(c, "/train/seed");
  std::vector<analysis::BenchReport> reports;
  for (auto m : models) {
    ctx.log->info("bench.model", {{"model", analysis::to_string(m)}});
    reports.push_back(analysis::bench_one(m, shape, opts));
  }
  std::ostringstream csv;
  analysis::write_bench_csv(csv, reports);
  ctx.write("bench.csv", csv.str());
  ctx.write("bench.json", analysis::bench_json(reports, shape, opts).dump(2) + "\n");
  json det = json::array();
  for (const auto& r : reports) det.push_back({{"model", r.model}, {"parameters", r.parameters}, {"flops", r.flops}});
  ctx.deterministic = {{"models", det}};
  *ctx.out << analysis::bench_table(reports);
  return kExitOk;
}

int cmd_gradcheck(Context& ctx, bool all) {
  const json& c = ctx.config;
  auto wanted = cfg<std::vector<std::string>>(c, "/gradcheck/cases");
  if (!all && wanted.empty()) throw ValueError("gradcheck needs --all or at least one --case");
  const auto known = gradient_suite_cases();
  for (const auto& w : wanted) {
    if (std::find(known.begin(), known.end(), w) == known.end()) throw ValueError("unknown gradcheck case '" + w + "'");
  }
  const double tol = cfg<double>(c, "/gradcheck/tolerance");
  const auto rows = gradient_suite(cfg<std::size_t>(c, "/gradcheck/trials"), cfg<std::uint64_t>(c, "/train/seed"));
  json table = json::array();
  bool ok = true;
  *ctx.out << "case                          max rel error   entries  status\n";
  for (const auto& r : rows) {
    if (!all && std::find(wanted.begin(), wanted.end(), r.name) == wanted.end()) continue;
    const bool pass = r.max_rel_error < tol;
    ok = ok && pass;
    char line[160];
    std::snprintf(line, sizeof line, "%-29s %13.3e %9zu  %s\n", r.name.c_str(), r.max_rel_error, r.entries,
                  pass ? "ok" : "FAIL");
    *ctx.out << line;
    table.push_back({{"case", r.name},
                     {"max_rel_error", r.max_rel_error},
                     {"entries", r.entries},
                     {"trials", r.trials},
                     {"worst", r.worst},
                     {"pass", pass}});
  }
  ctx.write("gradcheck.json", json{{"tolerance", tol}, {"cases", table}}.dump(2) + "\n");
  ctx.deterministic = {{"cases", table}};
  return ok ? kExitOk : kExitRuntime;
}

int cmd_convert(Context& ctx) {
  const json& c = ctx.config;
  const nn::Network net = load_required(c, "/convert/checkpoint", "convert.checkpoint");
  convert::ConvertOptions o;
  o.samples = cfg<std::size_t>(c, "/convert/samples");
  o.refinements = cfg<std::size_t>(c, "/convert/refinements");
  const auto res = convert::kan_to_trukan(net, o);
  nn::save_checkpoint(res.network, (ctx.out_dir / "checkpoint.json").string());
  ctx.record_file(ctx.out_dir / "checkpoint.json");
  const json report = res.report();
  ctx.write("conversion_report.json", report.dump(2) + "\n");
  ctx.deterministic = {{"checkpoint_hash", nn::checkpoint_hash(res.network)}, {"report", report}};
  *ctx.out << "converted " << res.layers.size() << " layer(s); max deviation " << res.max_deviation
           << ", max condition " << res.max_condition << '\n';
  return kExitOk;
}

// ---------------------------------------------------------------------------
// Argument handling

struct Args {
  std::string config_path;
  std::vector<std::string> sets;
  std::string out;
  bool json_logs = false;
  std::optional<std::uint64_t> seed;
  int verbosity = 0;
  std::string checkpoint;
  std::optional<double> threshold;
  std::string heads;
  bool all = false;
  std::vector<std::string> cases;
  std::optional<std::size_t> trials;
  bool print_config = false;
};

void add_common(CLI::App* sub, Args& a) {
  sub->add_option("-c,--config", a.config_path, "JSON config file");
  sub->add_option("--set", a.sets, "dotted-key override, e.g. train.seed=7")->allow_extra_args(false);
  sub->add_option("-o,--out", a.out, "output directory (relative paths resolve under $TRUKAN_OUTPUT_ROOT)");
  sub->add_flag("--json-logs", a.json_logs, "line-delimited JSON logs");
  sub->add_option("--seed", a.seed, "seed for data, initialisation and shuffling (train.seed)");
  sub->add_flag("-v,--verbose", a.verbosity, "more logging; repeatable");
  sub->add_flag("--print-config", a.print_config, "print the effective config and exit");
}

// Section whose checkpoint option --checkpoint fills.
const char* checkpoint_section(const std::string& command) {
  if (command == "eval") return "eval";
  if (command == "prune") return "prune";
  if (command == "export-curves") return "curves";
  if (command == "convert-basis") return "convert";
  return nullptr;
}

json compose_config(const std::string& command, const Args& a, const json& file_cfg, const json* checkpoint_meta) {
  json c = default_config();
  if (checkpoint_meta && checkpoint_meta->contains("config")) {
    // Data settings the checkpoint was trained with, so eval/prune see the same inputs.
    const json& mc = checkpoint_meta->at("config");
    if (mc.contains("data")) merge_config(c, json{{"data", mc.at("data")}});
    if (mc.contains("train") && mc.at("train").contains("seed")) {
      merge_config(c, json{{"train", {{"seed", mc.at("train").at("seed")}}}});
    }
  }
  if (!file_cfg.is_null()) merge_config(c, file_cfg);
  for (const auto& s : a.sets) apply_override(c, s);
  if (a.seed) c["train"]["seed"] = *a.seed;
  if (const char* sec = checkpoint_section(command); sec && !a.checkpoint.empty()) c[sec]["checkpoint"] = a.checkpoint;
  if (a.threshold) c["prune"]["threshold"] = *a.threshold;
  if (!a.heads.empty()) {
    json heads = json::array();
    std::stringstream ss(a.heads);
    for (std::string h; std::getline(ss, h, ',');) {
      if (!h.empty()) heads.push_back(h);
    }
    c["bench"]["heads"] = heads;
  }
  if (!a.cases.empty()) c["gradcheck"]["cases"] = a.cases;
  if (a.trials) c["gradcheck"]["trials"] = *a.trials;
  return c;
}

fs::path resolve_out(const std::string& command, const std::string& out) {
  fs::path p = out.empty() ? fs::path("runs") / command : fs::path(out);
  if (p.is_relative()) {
    if (const char* root = std::getenv("TRUKAN_OUTPUT_ROOT"); root && *root) p = fs::path(root) / p;
  }
  return p;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"TruKAN layers, baselines, training and analysis tools", "trukan"};
  app.require_subcommand(1);
  Args a;
  struct Sub {
    const char* name;
    const char* help;
  };
  const Sub subs[] = {{"train", "train a model and write a checkpoint"},
                      {"eval", "evaluate a checkpoint"},
                      {"bench", "benchmark train steps across layer kinds"},
                      {"prune", "magnitude-prune a checkpoint"},
                      {"export-curves", "export per-edge activation curves"},
                      {"gradcheck", "finite-difference gradient suite"},
                      {"convert-basis", "convert B-spline KAN layers to truncated-power form"}};
  for (const auto& s : subs) {
    CLI::App* sub = app.add_subcommand(s.name, s.help);
    add_common(sub, a);
    const std::string n = s.name;
    if (checkpoint_section(n)) sub->add_option("--checkpoint", a.checkpoint, "input checkpoint");
    if (n == "prune") sub->add_option("--threshold", a.threshold, "edge score threshold");
    if (n == "bench") sub->add_option("--heads", a.heads, "comma-separated models, e.g. kan-pbf,trukan-fs");
    if (n == "gradcheck") {
      sub->add_flag("--all", a.all, "check every case");
      sub->add_option("--case", a.cases, "check one case; repeatable");
      sub->add_option("--trials", a.trials, "seeded trials per case");
    }
  }

  std::vector<std::string> rev(args.rbegin(), args.rend());
  try {
    app.parse(rev);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? kExitOk : kExitValidation;
  }
  const std::string command = app.get_subcommands().front()->get_name();
  Logger log(err, a.json_logs, a.verbosity);

  Context ctx;
  ctx.command = command;
  ctx.log = &log;
  ctx.out = &out;
  try {
    json file_cfg;
    if (!a.config_path.empty()) {
      const std::string text = read_file(a.config_path);
      file_cfg = json::parse(text, nullptr, false);
      if (file_cfg.is_discarded()) throw FormatError("config '" + a.config_path + "' is not valid JSON");
    }
    ctx.config = compose_config(command, a, file_cfg, nullptr);
    if (const char* sec = checkpoint_section(command)) {
      const auto ck = ctx.config[sec]["checkpoint"].get<std::string>();
      if (!ck.empty()) {
        const json meta = nn::load_checkpoint(ck).meta;
        ctx.config = compose_config(command, a, file_cfg, &meta);
      }
    }
    if (a.print_config) {
      out << ctx.config.dump(2) << '\n';
      return kExitOk;
    }
    ctx.out_dir = resolve_out(command, a.out);
    fs::create_directories(ctx.out_dir);
    ctx.write("config.json", ctx.config.dump(2) + "\n");
    log.debug("config", {{"out", ctx.out_dir.string()}});
  } catch (const Error& e) {
    log.error(e.what());
    return kExitValidation;
  } catch (const std::exception& e) {
    log.error(e.what());
    return kExitValidation;
  }

  int code = kExitOk;
  try {
    if (command == "train") code = cmd_train(ctx);
    else if (command == "eval") code = cmd_eval(ctx);
    else if (command == "bench") code = cmd_bench(ctx);
    else if (command == "prune") code = cmd_prune(ctx);
    else if (command == "export-curves") code = cmd_curves(ctx);
    else if (command == "gradcheck") code = cmd_gradcheck(ctx, a.all);
    else if (command == "convert-basis") code = cmd_convert(ctx);
  } catch (const NumericError& e) {
    log.error(e.what());
    code = kExitRuntime;
  } catch (const ValueError& e) {
    log.error(e.what());
    code = kExitValidation;
  } catch (const FormatError& e) {
    log.error(e.what());
    code = kExitValidation;
  } catch (const ShapeError& e) {
    log.error(e.what());
    code = kExitValidation;
  } catch (const std::exception& e) {
    log.error(e.what());
    code = kExitRuntime;
  }
  ctx.deterministic["exit_code"] = code;
  try {
    ctx.write_manifest();
  } catch (const std::exception& e) {
    log.error(e.what());
    return kExitRuntime;
  }
  return code;
}

int run(int argc, char** argv) {
  std::vector<std::string> args(argv + 1, argv + argc);
  return run(args, std::cout, std::cerr);
}

}  // namespace trukan::cli
