#pragma once

// Seeded training loop with validation-based early stopping.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "ssmvis/encoders.hpp"
#include "ssmvis/error.hpp"
#include "ssmvis/tensor.hpp"

namespace ssmvis::train {

enum class OptimizerKind { sgd, adam };

std::string_view to_string(OptimizerKind kind);
OptimizerKind parse_optimizer(std::string_view name);

struct TrainConfig {
  std::size_t epochs_max = 200;
  double learning_rate = 1e-3;
  std::size_t batch_size = 8;
  std::size_t patience = 10;  // epochs without validation improvement
  std::uint64_t seed = 0;
  OptimizerKind optimizer = OptimizerKind::adam;
  // A mean training loss above this (or any non-finite value) is treated
  // as divergence.
  double divergence_loss = 1e3;

  /// Throws ConfigError.
  void validate() const;
};

/// Training blew up; carries the 1-based epoch in which it happened.
class DivergenceError : public NumericError {
 public:
  DivergenceError(std::size_t epoch, const std::string& what);
  std::size_t epoch() const { return epoch_; }

 private:
  std::size_t epoch_;
};

struct OptimizerState {
  std::uint64_t step = 0;
  std::vector<std::vector<double>> first_moment;
  std::vector<std::vector<double>> second_moment;
};

/// One update of every parameter from its gradient.
///   sgd:  p -= lr * g
///   adam: bias-corrected moments, beta1 0.9, beta2 0.999, eps 1e-8
/// Throws ShapeError when a gradient's length does not match its parameter.
void optimizer_step(OptimizerKind kind, std::span<Tensor> params, std::span<const std::vector<double>> grads,
                    OptimizerState& state, double learning_rate);

/// Images with integer labels, index-aligned.
struct Examples {
  std::vector<Tensor> images;
  std::vector<int> labels;

  std::size_t size() const { return labels.size(); }
};

struct DataSplit {
  Examples train;
  Examples val;
};

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_loss = 0.0;
  double val_loss = 0.0;
  double val_accuracy = 0.0;
};

struct Checkpoint {
  encoders::ParameterSet weights;
  std::size_t epoch = 0;
  double val_accuracy = 0.0;
  double val_loss = 0.0;
};

struct TrainResult {
  Checkpoint best;
  std::vector<EpochRecord> history;
};

/// Tracks the best validation epoch: higher accuracy wins, equal accuracy
/// with strictly lower loss also wins. Stops once `patience` epochs have
/// passed without a new best.
class EarlyStopper {
 public:
  explicit EarlyStopper(std::size_t patience);

  /// Returns true when this epoch becomes the new best.
  bool observe(std::size_t epoch, double val_accuracy, double val_loss);
  bool should_stop() const;

  std::size_t best_epoch() const { return best_epoch_; }
  double best_accuracy() const { return best_accuracy_; }
  double best_loss() const { return best_loss_; }

 private:
  std::size_t patience_;
  std::size_t best_epoch_ = 0;
  std::size_t last_epoch_ = 0;
  double best_accuracy_ = -1.0;
  double best_loss_ = 0.0;
};

struct Evaluation {
  std::vector<int> predicted;               // argmax, lowest index on ties
  std::vector<std::vector<double>> scores;  // softmax rows
  double loss = 0.0;                        // mean cross-entropy
  double accuracy = 0.0;
};

/// Forward pass over every example without recording.
Evaluation evaluate(const encoders::EncoderSpec& spec, const encoders::ParameterSet& weights,
                    const Examples& data);

/// Seeds the thread's generator with config.seed, draws the initial
/// weights, then trains with per-epoch shuffled minibatches. Returns the
/// best-validation checkpoint and the full history.
TrainResult train_run(const encoders::EncoderSpec& spec, const DataSplit& split, const TrainConfig& config,
                      const std::function<void(const EpochRecord&)>& on_epoch = {});

/// Tab-separated history: header line then one row per epoch.
std::string format_history(std::span<const EpochRecord> history);

}  // namespace ssmvis::train
