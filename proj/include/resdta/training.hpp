// Copyright 2026 The ResDTA Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iomanip>
#include <limits>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"
#include "resdta/dataset.hpp"
#include "resdta/error.hpp"
#include "resdta/metrics.hpp"
#include "resdta/model.hpp"
#include "resdta/random.hpp"

namespace resdta {

struct TrainConfig {
  double lr_initial = 1e-4;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  std::size_t batch_size = 256;
  std::size_t epochs = 400;
  std::size_t lr_drop_period = 200;
  double lr_drop_factor = 0.1;
  /// Every restart_period epochs the Adam state is reset and the best
  /// weights so far are reloaded. 0 disables restarts.
  std::size_t restart_period = 100;
  /// Mini-batches whose gradients are summed before one Adam update.
  std::size_t accumulation_steps = 1;
  std::uint64_t seed = 0;
  /// Global L2 norm cap on the update gradient; 0 disables clipping.
  double grad_clip = 0.0;

  bool operator==(const TrainConfig&) const = default;
};

inline void validate(const TrainConfig& cfg) {
  if (!(cfg.lr_initial > 0.0) || !(cfg.adam_epsilon > 0.0) || cfg.batch_size == 0 || cfg.epochs == 0 ||
      cfg.lr_drop_period == 0 || !(cfg.lr_drop_factor > 0.0) || cfg.accumulation_steps == 0 ||
      cfg.restart_period > cfg.epochs || cfg.grad_clip < 0.0) {
    throw Error(ErrorKind::kInvalidArgument, "invalid training configuration");
  }
}

/// sqrt((1/n) sum (pred - target)^2)
inline double rmse_loss(std::span<const double> pred, std::span<const double> target) {
  if (pred.size() != target.size()) {
    throw Error(ErrorKind::kLengthMismatch, "rmse_loss: lengths " + std::to_string(pred.size()) + " and " +
                                                std::to_string(target.size()));
  }
  if (pred.empty()) throw Error(ErrorKind::kEmptyInput, "rmse_loss on empty input");
  return std::sqrt(mse(target, pred));
}

/// lr_initial * factor^floor(epoch / period)
inline double schedule_lr(std::size_t epoch, const TrainConfig& cfg) {
  return cfg.lr_initial * std::pow(cfg.lr_drop_factor, static_cast<double>(epoch / cfg.lr_drop_period));
}

template <typename T>
class Adam {
 public:
  Adam(const ModelConfig& config, const TrainConfig& cfg)
      : cfg_(cfg), m_(zero_params<T>(config)), v_(zero_params<T>(config)) {}

  void reset() {
    for_each_tensor(m_, [](const std::string&, Mat<T>& x) { x.setZero(); });
    for_each_tensor(v_, [](const std::string&, Mat<T>& x) { x.setZero(); });
    steps_ = 0;
  }

  std::uint64_t steps() const { return steps_; }

  void step(ModelParams<T>& params, const ModelParams<T>& grads, double lr) {
    ++steps_;
    const double bias1 = 1.0 - std::pow(cfg_.adam_beta1, static_cast<double>(steps_));
    const double bias2 = 1.0 - std::pow(cfg_.adam_beta2, static_cast<double>(steps_));
    const T b1 = static_cast<T>(cfg_.adam_beta1);
    const T b2 = static_cast<T>(cfg_.adam_beta2);
    const T step_size = static_cast<T>(lr / bias1);
    const T inv_sqrt_bias2 = static_cast<T>(1.0 / std::sqrt(bias2));
    const T eps = static_cast<T>(cfg_.adam_epsilon);

    std::vector<Mat<T>*> p, m, v;
    std::vector<const Mat<T>*> g;
    for_each_tensor(params, [&](const std::string&, Mat<T>& x) { p.push_back(&x); });
    for_each_tensor(grads, [&](const std::string&, const Mat<T>& x) { g.push_back(&x); });
    for_each_tensor(m_, [&](const std::string&, Mat<T>& x) { m.push_back(&x); });
    for_each_tensor(v_, [&](const std::string&, Mat<T>& x) { v.push_back(&x); });
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i]->array() = b1 * m[i]->array() + (T(1) - b1) * g[i]->array();
      v[i]->array() = b2 * v[i]->array() + (T(1) - b2) * g[i]->array().square();
      p[i]->array() -= step_size * m[i]->array() / (v[i]->array().sqrt() * inv_sqrt_bias2 + eps);
    }
  }

 private:
  TrainConfig cfg_;
  ModelParams<T> m_;
  ModelParams<T> v_;
  std::uint64_t steps_ = 0;
};

struct EpochRecord {
  std::size_t epoch = 0;
  double train_rmse = 0.0;
  double val_mse = 0.0;
  double val_ci = 0.0;
  double lr = 0.0;
  bool restarted = false;
  std::size_t updates = 0;
};

struct TrainHistory {
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_val_mse = std::numeric_limits<double>::infinity();
};

template <typename T>
struct FitResult {
  ModelParams<T> best;
  TrainHistory history;
};

template <typename T>
struct FitCallbacks {
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const ModelParams<T>&, std::size_t epoch)> on_improved;
};

namespace detail {

template <typename T>
void zero(ModelParams<T>& p) {
  for_each_tensor(p, [](const std::string&, Mat<T>& x) { x.setZero(); });
}

template <typename T>
void scale(ModelParams<T>& p, T factor) {
  for_each_tensor(p, [&](const std::string&, Mat<T>& x) { x *= factor; });
}

template <typename T>
double squared_norm(const ModelParams<T>& p) {
  double total = 0.0;
  for_each_tensor(p, [&](const std::string&, const Mat<T>& x) { total += static_cast<double>(x.squaredNorm()); });
  return total;
}

}  // namespace detail

/// Accumulates, over a window of samples, sum_i r_i * grad(pred_i) with
/// r_i = pred_i - y_i, plus the squared-error total. finish() rescales by
/// 1 / (n * rmse) which turns the sum into the gradient of the window RMSE,
/// so the result does not depend on how the window was cut into batches.
template <typename T>
class RmseGradient {
 public:
  explicit RmseGradient(const ModelConfig& config) : grads_(zero_params<T>(config)) {}

  void reset() {
    detail::zero(grads_);
    sse_ = 0.0;
    count_ = 0;
  }

  /// Forward + backward for one record; returns the prediction.
  T add(const ModelParams<T>& params, std::span<const Token> drug, std::span<const Token> protein, double target,
        std::vector<Vec<T>> dropout) {
    const T pred = forward_sample(params, drug, protein, std::move(dropout), cache_);
    const double residual = static_cast<double>(pred) - target;
    sse_ += residual * residual;
    ++count_;
    backward_sample(params, cache_, static_cast<T>(residual), grads_);
    return pred;
  }

  double sse() const { return sse_; }
  std::size_t count() const { return count_; }
  double rmse() const { return count_ == 0 ? 0.0 : std::sqrt(sse_ / static_cast<double>(count_)); }

  const ModelParams<T>& finish() {
    const double loss = rmse();
    const double factor = loss > 0.0 ? 1.0 / (static_cast<double>(count_) * loss) : 0.0;
    detail::scale(grads_, static_cast<T>(factor));
    return grads_;
  }

  ModelParams<T>& grads() { return grads_; }

 private:
  ModelParams<T> grads_;
  SampleCache<T> cache_;
  double sse_ = 0.0;
  std::size_t count_ = 0;
};

/// Contiguous token rows for a list of records.
inline void gather_tokens(const EncodedDataset& data, std::span<const InteractionRecord> records,
                          std::vector<Token>& drug, std::vector<Token>& protein) {
  drug.clear();
  protein.clear();
  drug.reserve(records.size() * data.smiles_len);
  protein.reserve(records.size() * data.protein_len);
  for (const auto& r : records) {
    if (r.drug_index >= data.n_drugs() || r.protein_index >= data.n_proteins()) {
      throw Error(ErrorKind::kIndexOutOfRange, "record references a missing drug or protein");
    }
    const auto d = data.drug(r.drug_index);
    const auto p = data.protein(r.protein_index);
    drug.insert(drug.end(), d.begin(), d.end());
    protein.insert(protein.end(), p.begin(), p.end());
  }
}

/// Inference-mode predictions, evaluated in chunks of `batch_size`.
template <typename T>
std::vector<double> predict(const ModelParams<T>& params, const EncodedDataset& data,
                            std::span<const InteractionRecord> records, std::size_t batch_size = 256) {
  if (batch_size == 0) throw Error(ErrorKind::kInvalidArgument, "batch_size must be positive");
  std::vector<double> out;
  out.reserve(records.size());
  std::vector<Token> drug, protein;
  for (std::size_t start = 0; start < records.size(); start += batch_size) {
    const auto chunk = records.subspan(start, std::min(batch_size, records.size() - start));
    gather_tokens(data, chunk, drug, protein);
    const auto preds = forward(params, TokenBatch{chunk.size(), drug, protein});
    for (T p : preds) out.push_back(static_cast<double>(p));
  }
  return out;
}

inline std::vector<double> affinities(std::span<const InteractionRecord> records) {
  std::vector<double> out;
  out.reserve(records.size());
  for (const auto& r : records) out.push_back(r.affinity);
  return out;
}

/// Adam on the RMSE loss with a stepped learning rate, periodic warm
/// restarts from the best-so-far weights, and gradient accumulation.
/// Returns the weights with the lowest validation MSE.
template <typename T>
FitResult<T> fit(ModelParams<T> params, const EncodedDataset& data, std::span<const InteractionRecord> train,
                 std::span<const InteractionRecord> val, const TrainConfig& cfg, const FitCallbacks<T>& callbacks = {}) {
  validate(cfg);
  if (train.empty() || val.empty()) throw Error(ErrorKind::kEmptySplit, "training and validation sets must be non-empty");

  const ModelConfig& model_config = params.config;
  Rng rng(cfg.seed);
  Adam<T> adam(model_config, cfg);
  RmseGradient<T> window(model_config);
  FitResult<T> result{params, {}};
  const std::vector<double> val_targets = affinities(val);
  const std::size_t window_size = cfg.batch_size * cfg.accumulation_steps;

  std::vector<std::size_t> order(train.size());
  for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
    EpochRecord record;
    record.epoch = epoch;
    record.lr = schedule_lr(epoch, cfg);
    if (epoch > 0 && cfg.restart_period > 0 && epoch % cfg.restart_period == 0) {
      params = result.best;
      adam.reset();
      record.restarted = true;
    }

    std::iota(order.begin(), order.end(), std::size_t{0});
    rng.shuffle(std::span<std::size_t>(order));

    double epoch_sse = 0.0;
    window.reset();
    for (std::size_t pos = 0; pos < order.size(); ++pos) {
      const InteractionRecord& r = train[order[pos]];
      if (r.drug_index >= data.n_drugs() || r.protein_index >= data.n_proteins()) {
        throw Error(ErrorKind::kIndexOutOfRange, "record references a missing drug or protein");
      }
      const T pred = window.add(params, data.drug(r.drug_index), data.protein(r.protein_index), r.affinity,
                                draw_dropout<T>(model_config, rng));
      if (!std::isfinite(static_cast<double>(pred))) {
        throw Error(ErrorKind::kNonFiniteLoss, "epoch " + std::to_string(epoch) + ", batch " +
                                                   std::to_string(pos / cfg.batch_size));
      }
      const bool window_full = window.count() == window_size;
      if (window_full || pos + 1 == order.size()) {
        epoch_sse += window.sse();
        const ModelParams<T>& grads = window.finish();
        if (cfg.grad_clip > 0.0) {
          const double norm = std::sqrt(detail::squared_norm(grads));
          if (norm > cfg.grad_clip) detail::scale(window.grads(), static_cast<T>(cfg.grad_clip / norm));
        }
        adam.step(params, grads, record.lr);
        ++record.updates;
        window.reset();
      }
    }
    record.train_rmse = std::sqrt(epoch_sse / static_cast<double>(train.size()));
    if (!std::isfinite(record.train_rmse)) {
      throw Error(ErrorKind::kNonFiniteLoss, "epoch " + std::to_string(epoch) + ": non-finite training loss");
    }

    const std::vector<double> val_pred = predict(params, data, val, cfg.batch_size);
    record.val_mse = mse(val_targets, val_pred);
    try {
      record.val_ci = concordance_index(val_targets, val_pred);
    } catch (const Error&) {
      record.val_ci = std::numeric_limits<double>::quiet_NaN();
    }
    if (!std::isfinite(record.val_mse)) {
      throw Error(ErrorKind::kNonFiniteLoss, "epoch " + std::to_string(epoch) + ": non-finite validation loss");
    }
    if (record.val_mse < result.history.best_val_mse) {
      result.history.best_val_mse = record.val_mse;
      result.history.best_epoch = epoch;
      result.best = params;
      if (callbacks.on_improved) callbacks.on_improved(result.best, epoch);
    }
    result.history.epochs.push_back(record);
    if (callbacks.on_epoch) callbacks.on_epoch(record);
  }
  return result;
}

inline std::string format_real(double v) {
  std::ostringstream os;
  os << std::setprecision(17) << v;
  return os.str();
}

/// epoch,train_rmse,val_mse,val_ci,lr,restarted
inline void write_history_csv(const TrainHistory& history, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorKind::kIo, "cannot write " + path);
  out << "epoch,train_rmse,val_mse,val_ci,lr,restarted\n";
  for (const auto& r : history.epochs) {
    out << r.epoch << ',' << format_real(r.train_rmse) << ',' << format_real(r.val_mse) << ','
        << format_real(r.val_ci) << ',' << format_real(r.lr) << ',' << (r.restarted ? 1 : 0) << '\n';
  }
}

inline nlohmann::json history_summary(const TrainHistory& history) {
  return {{"best_epoch", history.best_epoch}, {"best_val_mse", history.best_val_mse},
          {"epochs", history.epochs.size()}};
}

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"lr_initial", c.lr_initial},
                     {"adam_beta1", c.adam_beta1},
                     {"adam_beta2", c.adam_beta2},
                     {"adam_epsilon", c.adam_epsilon},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"lr_drop_period", c.lr_drop_period},
                     {"lr_drop_factor", c.lr_drop_factor},
                     {"restart_period", c.restart_period},
                     {"accumulation_steps", c.accumulation_steps},
                     {"seed", c.seed},
                     {"grad_clip", c.grad_clip}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  auto get = [&](const char* key, auto& field) {
    if (j.contains(key)) j.at(key).get_to(field);
  };
  get("lr_initial", c.lr_initial);
  get("adam_beta1", c.adam_beta1);
  get("adam_beta2", c.adam_beta2);
  get("adam_epsilon", c.adam_epsilon);
  get("batch_size", c.batch_size);
  get("epochs", c.epochs);
  get("lr_drop_period", c.lr_drop_period);
  get("lr_drop_factor", c.lr_drop_factor);
  get("restart_period", c.restart_period);
  get("accumulation_steps", c.accumulation_steps);
  get("seed", c.seed);
  get("grad_clip", c.grad_clip);
}

}  // namespace resdta
