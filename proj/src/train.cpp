#include "trukan/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <sstream>

#include "trukan/error.hpp"
#include "trukan/ops.hpp"

namespace trukan::train {

Tensor mse_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw ShapeError("mse_loss: prediction " + pred.shape().str() + " vs target " + target.shape().str());
  }
  if (pred.size() == 0) throw ValueError("mse_loss: empty input");
  auto diff = sub(pred, target);
  return mean(mul(diff, diff));
}

Tensor cross_entropy(const Tensor& logits, const Tensor& target) {
  if (logits.shape() != target.shape()) {
    throw ShapeError("cross_entropy: logits " + logits.shape().str() + " vs target " + target.shape().str());
  }
  const std::size_t n = logits.rows(), c = logits.cols();
  if (n == 0 || c == 0) throw ValueError("cross_entropy: empty input");
  auto z = logits.data();
  auto y = target.data();
  // Softmax rows are kept for the backward pass.
  std::vector<double> probs(n * c);
  double total = 0.0;
  for (std::size_t r = 0; r < n; ++r) {
    const double* row = z.data() + r * c;
    const double peak = *std::max_element(row, row + c);
    double sum = 0.0;
    for (std::size_t j = 0; j < c; ++j) sum += std::exp(row[j] - peak);
    const double lse = peak + std::log(sum);
    for (std::size_t j = 0; j < c; ++j) {
      probs[r * c + j] = std::exp(row[j] - lse);
      total -= y[r * c + j] * (row[j] - lse);
    }
  }
  Buffer out{total / static_cast<double>(n)};
  return make_result("cross_entropy", {1, 1}, std::move(out), {logits, target},
                     [logits, target, probs = std::move(probs), n, c](std::span<const double> g,
                                                                      std::span<const double>) mutable {
                       const double scale = g[0] / static_cast<double>(n);
                       auto y = target.data();
                       if (logits.requires_grad()) {
                         auto dst = logits.grad_mut();
                         for (std::size_t r = 0; r < n; ++r) {
                           double ysum = 0.0;
                           for (std::size_t j = 0; j < c; ++j) ysum += y[r * c + j];
                           for (std::size_t j = 0; j < c; ++j)
                             dst[r * c + j] += scale * (ysum * probs[r * c + j] - y[r * c + j]);
                         }
                       }
                       if (target.requires_grad()) {
                         auto dst = target.grad_mut();
                         auto z = logits.data();
                         for (std::size_t r = 0; r < n; ++r) {
                           const double* row = z.data() + r * c;
                           // log p = z - lse, and lse = z_j - log p_j for any j.
                           const double lse = row[0] - std::log(probs[r * c]);
                           for (std::size_t j = 0; j < c; ++j) dst[r * c + j] -= scale * (row[j] - lse);
                         }
                       }
                     });
}

Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  if (labels.size() != logits.rows()) {
    throw ShapeError("cross_entropy: " + std::to_string(labels.size()) + " labels for logits " + logits.shape().str());
  }
  Tensor onehot = Tensor::zeros(logits.rows(), logits.cols());
  auto d = onehot.data_mut();
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] < 0 || static_cast<std::size_t>(labels[r]) >= logits.cols()) {
      throw ValueError("cross_entropy: label " + std::to_string(labels[r]) + " out of range");
    }
    d[r * logits.cols() + static_cast<std::size_t>(labels[r])] = 1.0;
  }
  return cross_entropy(logits, onehot);
}

Metrics metrics(const std::vector<int>& pred, const std::vector<int>& truth, std::size_t num_classes) {
  if (pred.size() != truth.size()) throw ShapeError("metrics: prediction and truth lengths differ");
  if (pred.empty()) throw ValueError("metrics: empty input");
  if (num_classes == 0) {
    int top = 0;
    for (std::size_t i = 0; i < pred.size(); ++i) top = std::max({top, pred[i], truth[i]});
    num_classes = static_cast<std::size_t>(top) + 1;
  }
  std::vector<std::size_t> tp(num_classes, 0), fp(num_classes, 0), fn(num_classes, 0);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    if (pred[i] < 0 || truth[i] < 0 || static_cast<std::size_t>(pred[i]) >= num_classes ||
        static_cast<std::size_t>(truth[i]) >= num_classes) {
      throw ValueError("metrics: class index out of range");
    }
    if (pred[i] == truth[i]) {
      ++correct;
      ++tp[pred[i]];
    } else {
      ++fp[pred[i]];
      ++fn[truth[i]];
    }
  }
  double f1_sum = 0.0;
  for (std::size_t c = 0; c < num_classes; ++c) {
    const double denom = static_cast<double>(2 * tp[c] + fp[c] + fn[c]);
    if (denom > 0.0) f1_sum += 2.0 * static_cast<double>(tp[c]) / denom;
  }
  return {static_cast<double>(correct) / static_cast<double>(pred.size()), f1_sum / static_cast<double>(num_classes)};
}

std::vector<int> argmax_rows(const Tensor& logits) {
  std::vector<int> out(logits.rows());
  auto d = logits.data();
  const std::size_t c = logits.cols();
  for (std::size_t r = 0; r < out.size(); ++r) {
    const double* row = d.data() + r * c;
    out[r] = static_cast<int>(std::max_element(row, row + c) - row);
  }
  return out;
}

LossKind parse_loss_kind(const std::string& name) {
  if (name == "mse") return LossKind::MSE;
  if (name == "cross_entropy" || name == "ce") return LossKind::CrossEntropy;
  throw ValueError("unknown loss '" + name + "' (expected mse or cross_entropy)");
}

const char* to_string(LossKind kind) { return kind == LossKind::MSE ? "mse" : "cross_entropy"; }

std::vector<double> TrainingLog::losses() const {
  std::vector<double> out;
  out.reserve(steps.size());
  for (const auto& s : steps) out.push_back(s.loss);
  return out;
}

void TrainingLog::write_jsonl(std::ostream& out) const {
  for (const auto& s : steps) {
    out << nlohmann::json{{"step", s.step}, {"epoch", s.epoch}, {"lr", s.lr}, {"loss", s.loss}, {"wall_ms", s.wall_ms}}
               .dump()
        << '\n';
  }
}

namespace {

Tensor batch_loss(const Tensor& out, const data::Dataset& ds, LossKind loss) {
  if (loss == LossKind::CrossEntropy) {
    if (!ds.is_classification()) throw ValueError("cross_entropy loss needs a classification dataset");
    return cross_entropy(out, ds.labels);
  }
  if (ds.is_classification()) {
    Tensor onehot = Tensor::zeros(ds.rows(), ds.num_classes);
    for (std::size_t r = 0; r < ds.rows(); ++r) onehot.data_mut()[r * ds.num_classes + ds.labels[r]] = 1.0;
    return mse_loss(out, onehot);
  }
  return mse_loss(out, ds.targets);
}

std::string grad_report(const optim::AdamW& opt) {
  std::ostringstream os;
  for (std::size_t g = 0; g < opt.groups().size(); ++g) {
    double sq = 0.0;
    for (const auto& p : opt.groups()[g].params)
      if (p.tensor.has_grad())
        for (double v : p.tensor.grad_mut()) sq += v * v;
    os << (g ? ", " : "") << opt.groups()[g].name << "=" << std::sqrt(sq);
  }
  return os.str();
}

}  // namespace

Evaluation evaluate(const nn::Network& net, const data::Dataset& ds, LossKind loss) {
  ds.validate();
  NoGradGuard guard;
  Tensor out = net.infer(ds.features);
  Evaluation ev;
  ev.loss = batch_loss(out, ds, loss).item();
  if (ds.is_classification()) {
    ev.metrics = metrics(argmax_rows(out), ds.labels, ds.num_classes);
  } else {
    ev.rmse = std::sqrt(mse_loss(out, ds.targets).item());
  }
  return ev;
}

BatchSampler::BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed)
    : n_(n), batch_(std::min(batch_size, n)), rng_(seed), order_(n) {
  if (n == 0 || batch_size == 0) throw ValueError("batch sampler: need n > 0 and batch_size > 0");
  std::iota(order_.begin(), order_.end(), 0);
}

std::vector<std::vector<std::size_t>> BatchSampler::next_epoch() {
  if (batch_ < n_) std::shuffle(order_.begin(), order_.end(), rng_);
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t b = 0; b < n_; b += batch_) {
    out.emplace_back(order_.begin() + static_cast<std::ptrdiff_t>(b),
                     order_.begin() + static_cast<std::ptrdiff_t>(std::min(n_, b + batch_)));
  }
  return out;
}

TrainingLog train(nn::Network& net, const data::Dataset& ds, const TrainConfig& cfg, StepCallback on_step) {
  ds.validate();
  if (ds.rows() == 0) throw ValueError("train: empty dataset");
  if (cfg.epochs == 0) throw ValueError("train: epochs must be positive");
  if (cfg.lr < 0.0) throw ValueError("train: lr must be non-negative");
  if (cfg.loss == LossKind::CrossEntropy && !ds.is_classification()) {
    throw ValueError("train: cross_entropy loss needs a classification dataset");
  }
  const std::size_t n = ds.rows();
  BatchSampler sampler(n, cfg.batch_size == 0 ? n : cfg.batch_size, cfg.seed);
  const std::size_t batch = sampler.batch_size();
  const std::size_t steps_per_epoch = sampler.batches_per_epoch();

  auto groups = cfg.use_preset ? optim::make_param_groups(net, cfg.lr_preset, cfg.weight_decay)
                               : optim::make_param_groups(net, cfg.lr, cfg.weight_decay);
  optim::AdamW opt(std::move(groups));
  optim::LookAhead la(opt, cfg.lookahead_k, cfg.lookahead_alpha);
  const optim::WarmupCosine sched{cfg.warmup_epochs, static_cast<double>(cfg.epochs), cfg.min_lr};

  std::mt19937_64 dropout_rng(cfg.seed ^ 0xD1B54A32D192ED03ULL);

  TrainingLog log;
  std::size_t step = 0;
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    if (cfg.max_steps && step >= cfg.max_steps) break;
    const auto batches = sampler.next_epoch();
    double epoch_loss = 0.0;
    std::size_t epoch_steps = 0;
    std::vector<int> epoch_pred, epoch_truth;
    for (std::size_t b = 0; b < steps_per_epoch; ++b) {
      if (cfg.max_steps && step >= cfg.max_steps) break;
      const auto t0 = std::chrono::steady_clock::now();
      const data::Dataset mb = batch == n ? ds : ds.subset(batches[b]);
      for (std::size_t g = 0; g < opt.groups().size(); ++g) {
        const double eta = opt.groups()[g].lr;
        opt.set_lr(g, cfg.schedule ? (eta == 0.0 ? 0.0 : sched.lr_at(eta, epoch, b, steps_per_epoch)) : eta);
      }
      net.zero_grad();
      Tensor out = net.forward(mb.features, true, &dropout_rng);
      Tensor loss = batch_loss(out, mb, cfg.loss);
      const double lv = loss.item();
      if (!std::isfinite(lv)) {
        throw NumericError("train: non-finite loss at step " + std::to_string(step) + " (epoch " +
                           std::to_string(epoch) + ", lr " + std::to_string(opt.lr(0)) + "); grad norms: " +
                           grad_report(opt));
      }
      backward(loss);
      if (cfg.lookahead) la.step(); else opt.step();
      net.enforce_masks();
      const double ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
      StepRecord rec{step, epoch, opt.lr(0), lv, ms};
      log.steps.push_back(rec);
      if (on_step) on_step(rec);
      epoch_loss += lv;
      ++epoch_steps;
      ++step;
      if (mb.is_classification()) {
        auto p = argmax_rows(out);
        epoch_pred.insert(epoch_pred.end(), p.begin(), p.end());
        epoch_truth.insert(epoch_truth.end(), mb.labels.begin(), mb.labels.end());
      }
    }
    if (epoch_steps == 0) break;
    EpochRecord er{epoch, epoch_loss / static_cast<double>(epoch_steps), 0.0, 0.0};
    if (!epoch_pred.empty()) {
      const auto m = metrics(epoch_pred, epoch_truth, ds.num_classes);
      er.accuracy = m.accuracy;
      er.macro_f1 = m.macro_f1;
    }
    log.epochs.push_back(er);
  }
  return log;
}

}  // namespace trukan::train
