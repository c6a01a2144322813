#include "ssmvis/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "ssmvis/rng.hpp"

namespace ssmvis::train {

namespace {

constexpr double kBeta1 = 0.9;
constexpr double kBeta2 = 0.999;
constexpr double kAdamEps = 1e-8;

std::string fmt_g(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

void require_nonempty(const Examples& e, const char* part) {
  if (e.size() == 0) throw DataError(std::string("train_run: ") + part + " set is empty");
  if (e.images.size() != e.labels.size()) {
    throw DataError(std::string("train_run: ") + part + " set has mismatched images and labels");
  }
}

}  // namespace

std::string_view to_string(OptimizerKind kind) { return kind == OptimizerKind::sgd ? "sgd" : "adam"; }

OptimizerKind parse_optimizer(std::string_view name) {
  if (name == "sgd") return OptimizerKind::sgd;
  if (name == "adam") return OptimizerKind::adam;
  throw ConfigError("unknown optimizer '" + std::string(name) + "' (expected sgd or adam)");
}

void TrainConfig::validate() const {
  if (epochs_max < 1) throw ConfigError("train: epochs_max must be >= 1");
  if (patience < 1) throw ConfigError("train: patience must be >= 1");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw ConfigError("train: learning_rate must be positive, got " + fmt_g(learning_rate));
  }
  if (!(divergence_loss > 0.0)) throw ConfigError("train: divergence_loss must be positive");
}

DivergenceError::DivergenceError(std::size_t epoch, const std::string& what)
    : NumericError("diverged in epoch " + std::to_string(epoch) + ": " + what), epoch_(epoch) {}

void optimizer_step(OptimizerKind kind, std::span<Tensor> params, std::span<const std::vector<double>> grads,
                    OptimizerState& state, double learning_rate) {
  if (params.size() != grads.size()) {
    throw ShapeError("optimizer_step: " + std::to_string(params.size()) + " parameters but " +
                     std::to_string(grads.size()) + " gradients");
  }
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (grads[i].size() != params[i].numel()) {
      throw ShapeError("optimizer_step: gradient " + std::to_string(i) + " has " + std::to_string(grads[i].size()) +
                       " values for parameter of shape " + shape_str(params[i].shape()));
    }
  }
  if (kind == OptimizerKind::sgd) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto p = params[i].mutable_data();
      for (std::size_t j = 0; j < p.size(); ++j) p[j] -= learning_rate * grads[i][j];
    }
    return;
  }
  if (state.first_moment.size() != params.size()) {
    state.step = 0;
    state.first_moment.assign(params.size(), {});
    state.second_moment.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.first_moment[i].assign(params[i].numel(), 0.0);
      state.second_moment[i].assign(params[i].numel(), 0.0);
    }
  }
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double c1 = 1.0 - std::pow(kBeta1, t);
  const double c2 = 1.0 - std::pow(kBeta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto p = params[i].mutable_data();
    auto& m = state.first_moment[i];
    auto& v = state.second_moment[i];
    const auto& g = grads[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = kBeta1 * m[j] + (1.0 - kBeta1) * g[j];
      v[j] = kBeta2 * v[j] + (1.0 - kBeta2) * g[j] * g[j];
      p[j] -= learning_rate * (m[j] / c1) / (std::sqrt(v[j] / c2) + kAdamEps);
    }
  }
}

EarlyStopper::EarlyStopper(std::size_t patience) : patience_(patience) {
  if (patience < 1) throw ConfigError("early stopping patience must be >= 1");
}

bool EarlyStopper::observe(std::size_t epoch, double val_accuracy, double val_loss) {
  last_epoch_ = epoch;
  const bool better = best_epoch_ == 0 || val_accuracy > best_accuracy_ ||
                      (val_accuracy == best_accuracy_ && val_loss < best_loss_);
  if (better) {
    best_epoch_ = epoch;
    best_accuracy_ = val_accuracy;
    best_loss_ = val_loss;
  }
  return better;
}

bool EarlyStopper::should_stop() const { return best_epoch_ != 0 && last_epoch_ - best_epoch_ >= patience_; }

Evaluation evaluate(const encoders::EncoderSpec& spec, const encoders::ParameterSet& weights, const Examples& data) {
  NoGradGuard no_grad;
  Evaluation ev;
  ev.predicted.reserve(data.size());
  ev.scores.reserve(data.size());
  double loss = 0.0;
  std::size_t correct = 0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Tensor logits = encoders::encoder_forward(data.images[i], spec, weights);
    const Tensor probs = softmax(logits);
    std::vector<double> row(probs.data().begin(), probs.data().end());
    const auto best = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
    const int label[1] = {data.labels[i]};
    loss += softmax_cross_entropy(reshape(logits, {1, logits.numel()}), label).item();
    correct += best == data.labels[i] ? 1 : 0;
    ev.predicted.push_back(best);
    ev.scores.push_back(std::move(row));
  }
  if (data.size() > 0) {
    ev.loss = loss / static_cast<double>(data.size());
    ev.accuracy = static_cast<double>(correct) / static_cast<double>(data.size());
  }
  return ev;
}

TrainResult train_run(const encoders::EncoderSpec& spec, const DataSplit& split, const TrainConfig& config,
                      const std::function<void(const EpochRecord&)>& on_epoch) {
  config.validate();
  spec.validate();
  require_nonempty(split.train, "training");
  require_nonempty(split.val, "validation");

  seed_all(config.seed);
  Rng& rng = thread_rng();
  encoders::ParameterSet weights = encoders::init_parameters(spec, rng);
  std::vector<Tensor> params;
  for (auto& [name, t] : weights.entries()) params.push_back(t);

  OptimizerState opt_state;
  EarlyStopper stopper(config.patience);
  TrainResult result;
  std::vector<std::size_t> order(split.train.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::vector<std::vector<double>> grads(params.size());

  for (std::size_t epoch = 1; epoch <= config.epochs_max; ++epoch) {
    rng.shuffle(std::span<std::size_t>(order));
    double loss_sum = 0.0;
    try {
      for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
        const std::size_t end = std::min(order.size(), start + config.batch_size);
        std::vector<Tensor> logits;
        std::vector<int> labels;
        for (std::size_t k = start; k < end; ++k) {
          logits.push_back(encoders::encoder_forward(split.train.images[order[k]], spec, weights));
          labels.push_back(split.train.labels[order[k]]);
        }
        weights.zero_grad();
        const Tensor loss = softmax_cross_entropy(stack(logits), labels);
        const double value = loss.item();
        if (!std::isfinite(value) || value > config.divergence_loss) {
          active_tape().clear();
          throw DivergenceError(epoch, "training loss " + fmt_g(value));
        }
        loss_sum += value * static_cast<double>(end - start);
        backward(loss);
        for (std::size_t i = 0; i < params.size(); ++i) grads[i] = params[i].grad();
        optimizer_step(config.optimizer, params, grads, opt_state, config.learning_rate);
      }
    } catch (const DivergenceError&) {
      throw;
    } catch (const NumericError& e) {
      active_tape().clear();
      throw DivergenceError(epoch, e.what());
    }

    Evaluation val;
    try {
      val = evaluate(spec, weights, split.val);
    } catch (const NumericError& e) {
      throw DivergenceError(epoch, e.what());
    }
    const EpochRecord record{epoch, loss_sum / static_cast<double>(order.size()), val.loss, val.accuracy};
    result.history.push_back(record);
    if (on_epoch) on_epoch(record);

    if (stopper.observe(epoch, val.accuracy, val.loss)) {
      result.best = Checkpoint{weights.snapshot(), epoch, val.accuracy, val.loss};
    }
    if (stopper.should_stop()) break;
  }
  return result;
}

std::string format_history(std::span<const EpochRecord> history) {
  std::string out = "epoch\ttrain_loss\tval_loss\tval_accuracy\n";
  for (const auto& r : history) {
    out += std::to_string(r.epoch) + "\t" + fmt_g(r.train_loss) + "\t" + fmt_g(r.val_loss) + "\t" +
           fmt_g(r.val_accuracy) + "\n";
  }
  return out;
}

}  // namespace ssmvis::train
