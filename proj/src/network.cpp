#include "trukan/network.hpp"

#include <algorithm>
#include <cctype>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "trukan/error.hpp"

namespace trukan::nn {

using nlohmann::json;

namespace {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

std::uint64_t layer_seed(std::uint64_t seed, std::size_t index) { return splitmix64(seed * 1315423911ULL + index); }

struct KindInfo {
  HeadKind kind;
  const char* name;
};

constexpr KindInfo kKinds[] = {
    {HeadKind::MLP, "MLP"},          {HeadKind::MLP_N, "MLP-N"},         {HeadKind::KAN, "KAN"},
    {HeadKind::KAN_N, "KAN-N"},      {HeadKind::SineKAN, "SineKAN"},     {HeadKind::SineKAN_N, "SineKAN-N"},
    {HeadKind::TruKAN_S, "TruKAN-S"}, {HeadKind::TruKAN_SN, "TruKAN-SN"}, {HeadKind::TruKAN_I, "TruKAN-I"},
    {HeadKind::TruKAN_IN, "TruKAN-IN"},
};

std::string canonical(std::string s) {
  for (char& c : s) c = c == '_' ? '-' : static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

}  // namespace

const std::vector<HeadKind>& all_head_kinds() {
  static const std::vector<HeadKind> kinds = [] {
    std::vector<HeadKind> v;
    for (const auto& k : kKinds) v.push_back(k.kind);
    return v;
  }();
  return kinds;
}

std::string to_string(HeadKind kind) {
  for (const auto& k : kKinds)
    if (k.kind == kind) return k.name;
  return "?";
}

HeadKind parse_head_kind(const std::string& name) {
  const std::string want = canonical(name);
  for (const auto& k : kKinds)
    if (canonical(k.name) == want) return k.kind;
  throw ValueError("unknown classifier kind '" + name + "'");
}

bool is_normalized(HeadKind kind) {
  switch (kind) {
    case HeadKind::MLP_N:
    case HeadKind::KAN_N:
    case HeadKind::SineKAN_N:
    case HeadKind::TruKAN_SN:
    case HeadKind::TruKAN_IN: return true;
    default: return false;
  }
}

// ---------------------------------------------------------------------------

Network::Network(const Network& other) : head(other.head), meta(other.meta), stages_(other.stages_) {
  for (const auto& l : other.layers_) layers_.push_back(l->clone());
}

Network& Network::operator=(const Network& other) {
  if (this != &other) {
    Network tmp(other);
    *this = std::move(tmp);
  }
  return *this;
}

void Network::add(std::unique_ptr<Layer> layer, std::string stage) {
  if (!layers_.empty() && layers_.back()->out_dim() != layer->in_dim()) {
    throw ShapeError("network: layer " + std::to_string(layers_.size()) + " (" + layer->kind() + ") expects " +
                     std::to_string(layer->in_dim()) + " inputs but previous layer produces " +
                     std::to_string(layers_.back()->out_dim()));
  }
  layers_.push_back(std::move(layer));
  stages_.push_back(std::move(stage));
}

Tensor Network::forward(const Tensor& x, bool training, std::mt19937_64* rng) const {
  ForwardContext ctx{training, rng};
  Tensor h = x;
  for (const auto& l : layers_) h = l->forward(h, ctx);
  return h;
}

Tensor Network::infer(const Tensor& x) const {
  NoGradGuard guard;
  return forward(x, false, nullptr);
}

std::size_t Network::in_dim() const { return layers_.empty() ? 0 : layers_.front()->in_dim(); }
std::size_t Network::out_dim() const { return layers_.empty() ? 0 : layers_.back()->out_dim(); }

std::vector<NamedParameter> Network::parameters() const {
  std::vector<NamedParameter> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    for (auto& p : layers_[i]->parameters())
      out.push_back({std::to_string(i) + "." + p.name, p.role, stages_[i], p.tensor});
  return out;
}

std::vector<NamedParameter> Network::buffers() const {
  std::vector<NamedParameter> out;
  for (std::size_t i = 0; i < layers_.size(); ++i)
    for (auto& p : layers_[i]->buffers())
      out.push_back({std::to_string(i) + "." + p.name, p.role, stages_[i], p.tensor});
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) n += l->parameter_count();
  return n;
}

void Network::zero_grad() const {
  for (auto& p : parameters()) p.tensor.zero_grad();
}

void Network::enforce_masks() {
  for (auto& l : layers_)
    if (auto* e = dynamic_cast<EdgeLayer*>(l.get())) e->enforce_mask();
}

// ---------------------------------------------------------------------------

ParamBreakdown param_count(const Network& net) {
  ParamBreakdown bd;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const Layer& l = net.layer(i);
    LayerCount lc;
    lc.index = i;
    lc.kind = l.kind();
    lc.total = l.parameter_count();
    const auto* edge = dynamic_cast<const EdgeLayer*>(&l);
    const std::size_t removed = edge ? edge->in_dim() * edge->out_dim() - edge->active_edges() : 0;
    for (const auto& p : l.parameters()) {
      std::size_t n = p.tensor.size();
      // Removed edges only ever shrink per-edge coefficient tensors.
      if (edge && removed > 0) {
        const std::size_t per_edge_rows = p.tensor.size() / (edge->in_dim() * edge->out_dim());
        if (p.tensor.size() % (edge->in_dim() * edge->out_dim()) == 0 && per_edge_rows > 0 && p.role != Role::Knot &&
            p.role != Role::Frequency && p.role != Role::Bias)
          n -= removed * per_edge_rows;
      }
      lc.by_role[to_string(p.role)] += n;
    }
    for (const auto& [role, n] : lc.by_role) bd.by_role[role] += n;
    bd.total += lc.total;
    bd.layers.push_back(std::move(lc));
  }
  return bd;
}

std::size_t reference_convention_count(const Network& net) {
  std::size_t total = 0;
  for (std::size_t i = 0; i < net.size(); ++i) {
    const Layer& l = net.layer(i);
    if (const auto* kan = dynamic_cast<const KANLayer*>(&l)) {
      const std::size_t per_edge = kan->basis_count() + 2 + 4;
      total += kan->active_edges() * per_edge;
    } else if (const auto* tk = dynamic_cast<const TruKANLayer*>(&l)) {
      std::size_t knot_params = 0;
      for (const auto& ks : tk->knot_sets()) knot_params += ks.parameter_count();
      total += tk->active_edges() * tk->parameters_per_edge() + knot_params;
      for (std::size_t o = 0; o < tk->out_dim(); ++o) {
        bool alive = false;
        for (std::size_t in = 0; in < tk->in_dim() && !alive; ++in) alive = tk->edge_active(in, o);
        if (alive) total += 1;
      }
    } else {
      total += l.parameter_count();
    }
  }
  return total;
}

// ---------------------------------------------------------------------------

namespace {

std::unique_ptr<Layer> make_basic(HeadKind kind, std::size_t in, std::size_t out, const ClassifierHparams& hp,
                                  std::uint64_t seed) {
  switch (kind) {
    case HeadKind::MLP:
    case HeadKind::MLP_N: return std::make_unique<DenseLayer>(in, out, true, seed);
    case HeadKind::KAN:
    case HeadKind::KAN_N: {
      KANConfig c;
      c.in = in;
      c.out = out;
      c.grid = hp.grid;
      c.order = hp.order;
      c.lo = hp.lo;
      c.hi = hp.hi;
      c.scale_mode = hp.kan_scale;
      c.seed = seed;
      return std::make_unique<KANLayer>(c);
    }
    case HeadKind::SineKAN:
    case HeadKind::SineKAN_N: {
      SineKANConfig c;
      c.in = in;
      c.out = out;
      c.grid = hp.grid;
      c.seed = seed;
      return std::make_unique<SineKANLayer>(c);
    }
    default: {
      TruKANConfig c;
      c.in = in;
      c.out = out;
      c.grid = hp.grid;
      c.order = hp.order;
      c.lo = hp.lo;
      c.hi = hp.hi;
      c.knot_mode = hp.knot_mode;
      c.sharing = (kind == HeadKind::TruKAN_I || kind == HeadKind::TruKAN_IN) ? basis::KnotSharing::Individual
                                                                              : basis::KnotSharing::Shared;
      c.seed = seed;
      return std::make_unique<TruKANLayer>(c);
    }
  }
}

// Closed-form trainable count of build_classifier's network at width h.
std::size_t classifier_count(HeadKind kind, std::size_t in, std::size_t h, std::size_t classes,
                             const ClassifierHparams& hp) {
  auto layer_count = [&](std::size_t a, std::size_t b) -> std::size_t {
    const std::size_t k = static_cast<std::size_t>(hp.order.value());
    switch (kind) {
      case HeadKind::MLP:
      case HeadKind::MLP_N: return a * b + b;
      case HeadKind::KAN:
      case HeadKind::KAN_N:
        return a * b * (hp.grid + k) + a * b * (hp.kan_scale == KanScaleMode::Trainable ? 2 : 1);
      case HeadKind::SineKAN:
      case HeadKind::SineKAN_N: return a * b * hp.grid + hp.grid + b;
      default: {
        const bool individual = kind == HeadKind::TruKAN_I || kind == HeadKind::TruKAN_IN;
        const std::size_t knot_sets = individual ? b : 1;
        const std::size_t knots =
            hp.knot_mode == basis::KnotMode::Learnable ? knot_sets * (hp.grid > 0 ? hp.grid - 1 : 0) : 0;
        return a * b * (hp.grid + k + 1) + knots;
      }
    }
  };
  std::size_t n = 2 * in + layer_count(in, h) + layer_count(h, classes);
  if (is_normalized(kind)) n += 2 * h;
  return n;
}

}  // namespace

std::size_t parity_hidden(HeadKind kind, std::size_t in, std::size_t classes, const ClassifierHparams& hp) {
  const std::size_t target = classifier_count(HeadKind::MLP, in, hp.reference_hidden, classes, hp);
  if (kind == HeadKind::MLP) return hp.reference_hidden;
  std::size_t lo = 1, hi = 1;
  while (classifier_count(kind, in, hi, classes, hp) < target) hi *= 2;
  while (lo < hi) {
    const std::size_t mid = (lo + hi) / 2;
    if (classifier_count(kind, in, mid, classes, hp) < target) lo = mid + 1; else hi = mid;
  }
  // lo is the first width at or above target; the one below may be closer.
  if (lo > 1) {
    const auto above = classifier_count(kind, in, lo, classes, hp) - target;
    const auto below = target - classifier_count(kind, in, lo - 1, classes, hp);
    if (below < above) return lo - 1;
  }
  return lo;
}

Network build_classifier(HeadKind kind, std::size_t in, std::size_t hidden, std::size_t classes,
                         const ClassifierHparams& hp) {
  if (in == 0 || classes == 0) throw ValueError("build_classifier: in_features and classes must be positive");
  const std::size_t h = hidden == 0 ? parity_hidden(kind, in, classes, hp) : hidden;
  Network net;
  net.head = to_string(kind);
  net.add(std::make_unique<BatchNormLayer>(in), "body");
  net.add(make_basic(kind, in, h, hp, layer_seed(hp.seed, 1)), "head");
  if (kind == HeadKind::MLP || kind == HeadKind::MLP_N) {
    net.add(std::make_unique<DropoutLayer>(h, hp.dropout), "head");
    net.add(std::make_unique<ReLULayer>(h), "head");
  }
  if (is_normalized(kind)) net.add(std::make_unique<LayerNormLayer>(h), "head");
  net.add(make_basic(kind, h, classes, hp, layer_seed(hp.seed, 2)), "head");
  net.meta["hidden"] = h;
  return net;
}

Network build_trukan_stack(const std::vector<std::size_t>& widths, const TruKANConfig& tmpl) {
  if (widths.size() < 2) throw ValueError("stack needs at least two widths");
  Network net;
  net.head = "trukan-stack";
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    TruKANConfig c = tmpl;
    c.in = widths[l];
    c.out = widths[l + 1];
    c.seed = layer_seed(tmpl.seed, l);
    net.add(std::make_unique<TruKANLayer>(c));
  }
  return net;
}

Network build_kan_stack(const std::vector<std::size_t>& widths, const KANConfig& tmpl) {
  if (widths.size() < 2) throw ValueError("stack needs at least two widths");
  Network net;
  net.head = "kan-stack";
  for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
    KANConfig c = tmpl;
    c.in = widths[l];
    c.out = widths[l + 1];
    c.seed = layer_seed(tmpl.seed, l);
    net.add(std::make_unique<KANLayer>(c));
  }
  return net;
}

// ---------------------------------------------------------------------------
// Serialization

namespace {

json tensor_json(const Tensor& t) {
  return {{"shape", {t.rows(), t.cols()}}, {"data", std::vector<double>(t.data().begin(), t.data().end())}};
}

void load_into(const json& j, const Tensor& dst, const std::string& where) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  const auto data = j.at("data").get<std::vector<double>>();
  if (shape.size() != 2 || shape[0] != dst.rows() || shape[1] != dst.cols() || data.size() != dst.size()) {
    throw FormatError(where + ": shape mismatch, expected " + dst.shape().str());
  }
  std::copy(data.begin(), data.end(), dst.data_mut().begin());
}

json layer_config(const Layer& l) {
  if (const auto* t = dynamic_cast<const TruKANLayer*>(&l)) {
    const auto& c = t->config();
    return {{"in", c.in}, {"out", c.out}, {"grid", c.grid}, {"order", c.order.value()}, {"lo", c.lo}, {"hi", c.hi},
            {"knot_mode", basis::to_string(c.knot_mode)}, {"sharing", basis::to_string(c.sharing)},
            {"pre_norm", c.pre_norm}};
  }
  if (const auto* k = dynamic_cast<const KANLayer*>(&l)) {
    const auto& c = k->config();
    return {{"in", c.in}, {"out", c.out}, {"grid", c.grid}, {"order", c.order.value()}, {"lo", c.lo}, {"hi", c.hi},
            {"scale_mode", c.scale_mode == KanScaleMode::Trainable ? "trainable" : "fixed"}};
  }
  if (const auto* s = dynamic_cast<const SineKANLayer*>(&l)) {
    const auto& c = s->config();
    return {{"in", c.in}, {"out", c.out}, {"grid", c.grid}};
  }
  if (const auto* d = dynamic_cast<const DenseLayer*>(&l)) {
    return {{"in", d->in_dim()}, {"out", d->out_dim()}, {"bias", d->has_bias()}};
  }
  if (const auto* n = dynamic_cast<const LayerNormLayer*>(&l)) return {{"dim", n->in_dim()}, {"eps", n->eps()}};
  if (const auto* b = dynamic_cast<const BatchNormLayer*>(&l)) {
    return {{"dim", b->in_dim()}, {"momentum", b->momentum()}, {"eps", b->eps()}};
  }
  if (const auto* d = dynamic_cast<const DropoutLayer*>(&l)) return {{"dim", d->in_dim()}, {"p", d->p()}};
  return {{"dim", l.in_dim()}};
}

std::unique_ptr<Layer> layer_from_config(const std::string& type, const json& c) {
  if (type == "trukan") {
    TruKANConfig cfg;
    cfg.in = c.at("in");
    cfg.out = c.at("out");
    cfg.grid = c.at("grid");
    cfg.order = basis::SplineOrder(c.at("order").get<int>());
    cfg.lo = c.at("lo");
    cfg.hi = c.at("hi");
    cfg.knot_mode = c.at("knot_mode") == "learnable" ? basis::KnotMode::Learnable : basis::KnotMode::Fixed;
    cfg.sharing = c.at("sharing") == "individual" ? basis::KnotSharing::Individual : basis::KnotSharing::Shared;
    cfg.pre_norm = c.value("pre_norm", false);
    return std::make_unique<TruKANLayer>(cfg);
  }
  if (type == "kan") {
    KANConfig cfg;
    cfg.in = c.at("in");
    cfg.out = c.at("out");
    cfg.grid = c.at("grid");
    cfg.order = basis::SplineOrder(c.at("order").get<int>());
    cfg.lo = c.at("lo");
    cfg.hi = c.at("hi");
    cfg.scale_mode = c.at("scale_mode") == "fixed" ? KanScaleMode::Fixed : KanScaleMode::Trainable;
    return std::make_unique<KANLayer>(cfg);
  }
  if (type == "sinekan") {
    SineKANConfig cfg;
    cfg.in = c.at("in");
    cfg.out = c.at("out");
    cfg.grid = c.at("grid");
    return std::make_unique<SineKANLayer>(cfg);
  }
  if (type == "dense") return std::make_unique<DenseLayer>(c.at("in"), c.at("out"), c.value("bias", true));
  if (type == "layer_norm") return std::make_unique<LayerNormLayer>(c.at("dim"), c.value("eps", 1e-5));
  if (type == "batch_norm") {
    return std::make_unique<BatchNormLayer>(c.at("dim"), c.value("momentum", 0.1), c.value("eps", 1e-5));
  }
  if (type == "dropout") return std::make_unique<DropoutLayer>(c.at("dim"), c.at("p"));
  if (type == "relu") return std::make_unique<ReLULayer>(c.at("dim"));
  throw FormatError("unknown layer type '" + type + "'");
}

}  // namespace

json to_json(const Network& net) {
  json layers = json::array();
  for (std::size_t i = 0; i < net.size(); ++i) {
    const Layer& l = net.layer(i);
    json entry{{"type", l.kind()}, {"stage", net.stage(i)}, {"config", layer_config(l)}};
    json params = json::object(), bufs = json::object();
    for (const auto& p : l.parameters()) params[p.name] = tensor_json(p.tensor);
    for (const auto& b : l.buffers()) bufs[b.name] = tensor_json(b.tensor);
    entry["params"] = std::move(params);
    entry["buffers"] = std::move(bufs);
    if (const auto* e = dynamic_cast<const EdgeLayer*>(&l); e && !e->mask().empty()) {
      std::vector<int> m(e->mask().begin(), e->mask().end());
      entry["mask"] = m;
    }
    layers.push_back(std::move(entry));
  }
  return {{"format", "trukan-network"}, {"version", kCheckpointVersion}, {"head", net.head},
          {"meta", net.meta},           {"layers", std::move(layers)}};
}

Network network_from_json(const json& j) {
  try {
    if (j.at("format") != "trukan-network") throw FormatError("checkpoint: unexpected format tag");
    if (j.at("version").get<int>() != kCheckpointVersion) {
      throw FormatError("checkpoint: unsupported version " + j.at("version").dump());
    }
    Network net;
    net.head = j.value("head", "");
    net.meta = j.value("meta", json::object());
    const auto& layers = j.at("layers");
    for (std::size_t i = 0; i < layers.size(); ++i) {
      const auto& e = layers[i];
      const std::string where = "checkpoint layers[" + std::to_string(i) + "]";
      auto layer = layer_from_config(e.at("type"), e.at("config"));
      if (auto* tk = dynamic_cast<TruKANLayer*>(layer.get()); tk && e.contains("buffers") &&
                                                               e["buffers"].contains("silu_residual")) {
        tk->set_silu_residual(Tensor::zeros(tk->in_dim(), tk->out_dim()));
      }
      auto params = layer->parameters();
      for (const auto& p : params) {
        if (!e.at("params").contains(p.name)) throw FormatError(where + ": missing parameter '" + p.name + "'");
        load_into(e["params"][p.name], p.tensor, where + "." + p.name);
      }
      if (e.at("params").size() != params.size()) throw FormatError(where + ": unexpected extra parameters");
      for (const auto& b : layer->buffers()) {
        if (e.contains("buffers") && e["buffers"].contains(b.name)) {
          load_into(e["buffers"][b.name], b.tensor, where + "." + b.name);
        }
      }
      if (e.contains("mask")) {
        auto* edge = dynamic_cast<EdgeLayer*>(layer.get());
        if (!edge) throw FormatError(where + ": mask on a layer without edges");
        const auto bits = e["mask"].get<std::vector<int>>();
        edge->set_mask(std::vector<bool>(bits.begin(), bits.end()));
      }
      net.add(std::move(layer), e.value("stage", "head"));
    }
    return net;
  } catch (const json::exception& ex) {
    throw FormatError(std::string("checkpoint: ") + ex.what());
  }
}

void save_checkpoint(const Network& net, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error("cannot write checkpoint '" + path + "'");
  out << to_json(net).dump() << '\n';
}

Network load_checkpoint(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot read checkpoint '" + path + "'");
  json j;
  try {
    in >> j;
  } catch (const json::exception& ex) {
    throw FormatError("checkpoint '" + path + "': " + ex.what());
  }
  return network_from_json(j);
}

std::string fnv1a_hex(const std::string& bytes) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

std::string checkpoint_hash(const Network& net) { return fnv1a_hex(to_json(net).dump()); }

}  // namespace trukan::nn
