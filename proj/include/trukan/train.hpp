#pragma once

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "trukan/data.hpp"
#include "trukan/network.hpp"
#include "trukan/optim.hpp"

namespace trukan::train {

// Mean squared error over every entry.
Tensor mse_loss(const Tensor& pred, const Tensor& target);
// Mean over rows of -sum_c target[r,c] log softmax(logits)[r,c].
Tensor cross_entropy(const Tensor& logits, const Tensor& target_probs);
Tensor cross_entropy(const Tensor& logits, const std::vector<int>& labels);

struct Metrics {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

// Macro F1 averages over `num_classes` classes (0: 1 + largest label seen);
// a class with no true and no predicted samples scores 0.
Metrics metrics(const std::vector<int>& pred, const std::vector<int>& truth, std::size_t num_classes = 0);
std::vector<int> argmax_rows(const Tensor& logits);

enum class LossKind { MSE, CrossEntropy };
LossKind parse_loss_kind(const std::string& name);
const char* to_string(LossKind kind);

struct TrainConfig {
  std::size_t batch_size = 512;   // 0: full batch
  std::size_t epochs = 30;
  std::size_t max_steps = 0;      // 0: no cap beyond epochs
  std::uint64_t seed = 0;
  double lr = 5e-4;
  optim::LrPreset lr_preset = optim::LrPreset::Table;
  bool use_preset = false;        // true: group learning rates come from lr_preset
  double weight_decay = 1e-4;
  double warmup_epochs = 10.0;
  double min_lr = 1e-5;
  bool schedule = true;
  bool lookahead = true;
  std::size_t lookahead_k = 5;
  double lookahead_alpha = 0.5;
  LossKind loss = LossKind::CrossEntropy;
};

struct StepRecord {
  std::size_t step = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double loss = 0.0;
  double wall_ms = 0.0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double loss = 0.0;
  double accuracy = 0.0;
  double macro_f1 = 0.0;
};

struct TrainingLog {
  std::vector<StepRecord> steps;
  std::vector<EpochRecord> epochs;

  double final_loss() const { return steps.empty() ? 0.0 : steps.back().loss; }
  std::vector<double> losses() const;
  // One {step, epoch, lr, loss, wall_ms} object per line.
  void write_jsonl(std::ostream& out) const;
};

struct Evaluation {
  double loss = 0.0;
  double rmse = 0.0;  // regression only
  Metrics metrics;    // classification only
};

Evaluation evaluate(const nn::Network& net, const data::Dataset& ds, LossKind loss);

// Mini-batch index order: a fresh permutation of 0..n-1 each epoch, cut
// into consecutive batches (the last one may be short). Full-batch runs keep
// the natural order.
class BatchSampler {
 public:
  BatchSampler(std::size_t n, std::size_t batch_size, std::uint64_t seed);

  std::size_t batch_size() const { return batch_; }
  std::size_t batches_per_epoch() const { return (n_ + batch_ - 1) / batch_; }
  std::vector<std::vector<std::size_t>> next_epoch();

 private:
  std::size_t n_;
  std::size_t batch_;
  std::mt19937_64 rng_;
  std::vector<std::size_t> order_;
};

// Optional per-step observer, e.g. a streaming log sink.
using StepCallback = std::function<void(const StepRecord&)>;

// Mini-batch training with AdamW (+ LookAhead) and the warmup/cosine
// schedule. The epoch count also sizes the schedule. Aborts with a
// NumericError carrying the last learning rate and per-group gradient norms
// when the loss turns non-finite.
TrainingLog train(nn::Network& net, const data::Dataset& ds, const TrainConfig& cfg, StepCallback on_step = {});

}  // namespace trukan::train
