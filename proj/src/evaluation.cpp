#include "deepcov/evaluation.hpp"

#include <cmath>
#include <fstream>
#include <ostream>
#include <sstream>

#include "deepcov/error.hpp"
#include "deepcov/raster.hpp"

namespace deepcov::eval {

using raster::format_double;

namespace {

void check_pair(std::span<const double> pred, std::span<const double> obs) {
  if (pred.size() != obs.size())
    throw Error(ErrorKind::Shape, "prediction and observation counts differ (" + std::to_string(pred.size()) +
                                      " vs " + std::to_string(obs.size()) + ")");
}

}  // namespace

double mse(std::span<const double> pred, std::span<const double> obs) {
  check_pair(pred, obs);
  if (pred.empty()) throw Error(ErrorKind::InvalidArgument, "mse of zero pairs");
  double acc = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) acc += (obs[i] - pred[i]) * (obs[i] - pred[i]);
  return acc / static_cast<double>(pred.size());
}

double r_squared(std::span<const double> pred, std::span<const double> obs) {
  check_pair(pred, obs);
  if (obs.size() < 2) throw Error(ErrorKind::InvalidArgument, "r_squared needs at least 2 observations");
  double mean = 0.0;
  for (double o : obs) mean += o;
  mean /= static_cast<double>(obs.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = 0; i < obs.size(); ++i) {
    ss_res += (obs[i] - pred[i]) * (obs[i] - pred[i]);
    ss_tot += (obs[i] - mean) * (obs[i] - mean);
  }
  if (ss_tot == 0.0) throw Error(ErrorKind::Numerical, "r_squared undefined for constant observations");
  return 1.0 - ss_res / ss_tot;
}

Metrics compute_metrics(std::span<const double> pred, std::span<const double> obs,
                        const std::string& target_transform) {
  return Metrics{mse(pred, obs), r_squared(pred, obs), obs.size(), target_transform};
}

std::string Metrics::to_text() const {
  std::ostringstream s;
  s << "n          " << n << '\n'
    << "mse        " << format_double(mse) << '\n'
    << "r_squared  " << format_double(r_squared) << "  (1 - SS_res/SS_tot)\n"
    << "scale      " << target_transform << " target\n";
  return s.str();
}

std::string Metrics::to_kv() const {
  std::ostringstream s;
  s << "n=" << n << '\n'
    << "mse=" << format_double(mse) << '\n'
    << "r_squared=" << format_double(r_squared) << '\n'
    << "target_transform=" << target_transform << '\n';
  return s.str();
}

FoldEvaluation evaluate_fold(const nn::Model& model, const data::Dataset& dataset,
                             const data::FoldAssignment& folds,
                             const std::function<void(std::size_t)>& on_row_access) {
  folds.validate();
  if (dataset.fold_labels.size() != dataset.size())
    throw Error(ErrorKind::InvalidArgument, "dataset folds are not assigned");
  FoldEvaluation out;
  out.rows = data::rows_in_fold(dataset, folds.test_fold);
  if (out.rows.empty()) throw Error(ErrorKind::InvalidArgument, "test fold is empty");
  std::vector<const data::Patch*> patches;
  for (std::size_t r : out.rows) {
    if (on_row_access) on_row_access(r);
    patches.push_back(&dataset.patches[r]);
    out.observed.push_back(dataset.targets[r]);
  }
  out.predicted = nn::predict(model, patches);
  out.metrics = compute_metrics(out.predicted, out.observed, data::to_string(dataset.target_transform));
  return out;
}

void export_scatter(std::span<const double> predicted, std::span<const double> observed, std::ostream& out) {
  check_pair(predicted, observed);
  out << "observed,predicted\n";
  for (std::size_t i = 0; i < observed.size(); ++i)
    out << format_double(observed[i]) << ',' << format_double(predicted[i]) << '\n';
}

void export_scatter(std::span<const double> predicted, std::span<const double> observed,
                    const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write scatter '" + path.string() + "'");
  export_scatter(predicted, observed, out);
}

}  // namespace deepcov::eval
