#pragma once

#include <filesystem>
#include <functional>
#include <iosfwd>
#include <span>
#include <string>
#include <vector>

#include "deepcov/dataset.hpp"
#include "deepcov/network.hpp"

namespace deepcov::eval {

struct Metrics {
  double mse = 0.0;
  double r_squared = 0.0;
  std::size_t n = 0;
  std::string target_transform;

  std::string to_text() const;
  /// `key=value` lines.
  std::string to_kv() const;
};

double mse(std::span<const double> pred, std::span<const double> obs);

/// 1 - SS_res / SS_tot. Negative for predictors worse than the observed mean.
/// Throws for n < 2 or constant observations.
double r_squared(std::span<const double> pred, std::span<const double> obs);

Metrics compute_metrics(std::span<const double> pred, std::span<const double> obs,
                        const std::string& target_transform);

struct FoldEvaluation {
  Metrics metrics;
  std::vector<std::size_t> rows;
  std::vector<double> predicted;
  std::vector<double> observed;
};

/// Eval-mode predictions for the rows of the test fold only. `on_row_access`,
/// when set, sees every dataset row read.
FoldEvaluation evaluate_fold(const nn::Model& model, const data::Dataset& dataset,
                             const data::FoldAssignment& folds,
                             const std::function<void(std::size_t)>& on_row_access = {});

/// `observed,predicted`, one row per pair in input order.
void export_scatter(std::span<const double> predicted, std::span<const double> observed, std::ostream& out);
void export_scatter(std::span<const double> predicted, std::span<const double> observed,
                    const std::filesystem::path& path);

}  // namespace deepcov::eval
