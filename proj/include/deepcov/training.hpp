#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "deepcov/dataset.hpp"
#include "deepcov/error.hpp"
#include "deepcov/kvconfig.hpp"
#include "deepcov/network.hpp"

namespace deepcov::train {

struct TrainConfig {
  std::size_t batch_size = 4096;
  std::size_t max_epochs = 300;
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  /// Epochs without holdout improvement before stopping; nullopt never stops
  /// early (the best epoch is still restored).
  std::optional<std::size_t> early_stop_patience = 50;
  std::uint64_t seed = 1;

  /// Batch 256, 100 epochs.
  static TrainConfig desk_scale();
  static TrainConfig from_kv(const KvConfig& kv, TrainConfig base);
  KvConfig to_kv() const;
  void validate() const;
};

struct AdamState {
  std::vector<ag::Tensor> m;
  std::vector<ag::Tensor> v;
  std::uint64_t t = 0;

  static AdamState zeros_like(std::span<const ag::Tensor* const> params);
  static AdamState zeros_like(const nn::ModelParameters& params);
};

/// One bias-corrected ADAM update. Throws ErrorKind::Numerical if any
/// gradient is non-finite, leaving params and state untouched.
void adam_step(std::span<ag::Tensor* const> params, std::span<const ag::Tensor* const> grads,
               AdamState& state, const TrainConfig& config);
/// Uses each parameter's accumulated gradient.
void adam_step(nn::ModelParameters& params, AdamState& state, const TrainConfig& config);

struct EpochRecord {
  std::size_t epoch = 0;  // 1-based
  double train_mse = 0.0;
  double holdout_mse = 0.0;
};

struct TrainingHistory {
  double initial_train_mse = 0.0;  // eval mode, before any update
  std::vector<EpochRecord> epochs;
  std::size_t best_epoch = 0;
  double best_holdout_mse = 0.0;
  std::string stop_reason;

  /// `epoch,train_mse,holdout_mse`
  void write_csv(std::ostream& out) const;
  void write_csv(const std::filesystem::path& path) const;
};

class TrainingDiverged : public Error {
 public:
  TrainingDiverged(const std::string& message, TrainingHistory history)
      : Error(ErrorKind::Numerical, message), history_(std::move(history)) {}
  const TrainingHistory& history() const { return history_; }

 private:
  TrainingHistory history_;
};

struct TrainHooks {
  /// Dataset rows of every mini-batch, before its gradient step.
  std::function<void(std::span<const std::size_t>)> on_batch;
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  nn::Model model;  // restored to the best epoch
  TrainingHistory history;
};

/// Mini-batch ADAM on the training folds, monitoring eval-mode MSE on
/// folds.monitor_fold() after every epoch. Targets are z-scored with the
/// training rows' mean/SD; reported MSEs are on the dataset's target scale.
TrainResult train(const nn::ModelParameters& initial, const data::Dataset& dataset,
                  const data::FoldAssignment& folds, const nn::ArchConfig& arch,
                  const TrainConfig& config, const TrainHooks& hooks = {});

/// Eval-mode MSE of a model on the given dataset rows.
double rows_mse(const nn::Model& model, const data::Dataset& dataset, std::span<const std::size_t> rows);

}  // namespace deepcov::train
