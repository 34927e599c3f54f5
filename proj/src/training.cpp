#include "deepcov/training.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>

#include "deepcov/raster.hpp"
#include "deepcov/rng.hpp"

namespace deepcov::train {

using raster::format_double;

TrainConfig TrainConfig::desk_scale() {
  TrainConfig c;
  c.batch_size = 256;
  c.max_epochs = 100;
  return c;
}

TrainConfig TrainConfig::from_kv(const KvConfig& kv, TrainConfig c) {
  if (auto v = kv.get("batch_size")) c.batch_size = static_cast<std::size_t>(parse_int(*v, "batch_size"));
  if (auto v = kv.get("max_epochs")) c.max_epochs = static_cast<std::size_t>(parse_int(*v, "max_epochs"));
  if (auto v = kv.get("learning_rate")) c.learning_rate = parse_double(*v, "learning_rate");
  if (auto v = kv.get("beta1")) c.beta1 = parse_double(*v, "beta1");
  if (auto v = kv.get("beta2")) c.beta2 = parse_double(*v, "beta2");
  if (auto v = kv.get("epsilon")) c.epsilon = parse_double(*v, "epsilon");
  if (auto v = kv.get("patience")) {
    if (*v == "inf" || *v == "none")
      c.early_stop_patience.reset();
    else
      c.early_stop_patience = static_cast<std::size_t>(parse_int(*v, "patience"));
  }
  if (auto v = kv.get("seed")) c.seed = static_cast<std::uint64_t>(parse_int(*v, "seed"));
  c.validate();
  return c;
}

KvConfig TrainConfig::to_kv() const {
  KvConfig kv;
  kv.append("batch_size", std::to_string(batch_size));
  kv.append("max_epochs", std::to_string(max_epochs));
  kv.append("learning_rate", format_double(learning_rate));
  kv.append("beta1", format_double(beta1));
  kv.append("beta2", format_double(beta2));
  kv.append("epsilon", format_double(epsilon));
  kv.append("patience", early_stop_patience ? std::to_string(*early_stop_patience) : "inf");
  kv.append("seed", std::to_string(seed));
  return kv;
}

void TrainConfig::validate() const {
  if (batch_size < 1) throw Error(ErrorKind::InvalidArgument, "batch_size must be >= 1");
  if (max_epochs < 1) throw Error(ErrorKind::InvalidArgument, "max_epochs must be >= 1");
  if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1))
    throw Error(ErrorKind::InvalidArgument, "beta1 and beta2 must lie in (0, 1)");
  if (!(learning_rate > 0) || !(epsilon > 0))
    throw Error(ErrorKind::InvalidArgument, "learning_rate and epsilon must be positive");
  if (early_stop_patience && *early_stop_patience == 0)
    throw Error(ErrorKind::InvalidArgument, "patience must be >= 1 (or inf)");
}

AdamState AdamState::zeros_like(std::span<const ag::Tensor* const> params) {
  AdamState s;
  for (const ag::Tensor* p : params) {
    s.m.emplace_back(p->shape(), 0.0);
    s.v.emplace_back(p->shape(), 0.0);
  }
  return s;
}

AdamState AdamState::zeros_like(const nn::ModelParameters& params) {
  std::vector<const ag::Tensor*> ptrs;
  for (const auto& [name, v] : params.tensors) ptrs.push_back(&v.value());
  return zeros_like(ptrs);
}

void adam_step(std::span<ag::Tensor* const> params, std::span<const ag::Tensor* const> grads,
               AdamState& state, const TrainConfig& config) {
  if (params.size() != grads.size() || params.size() != state.m.size() || params.size() != state.v.size())
    throw Error(ErrorKind::Shape, "adam_step: parameter, gradient and state counts differ");
  for (std::size_t i = 0; i < params.size(); ++i) {
    if (params[i]->shape() != grads[i]->shape() || params[i]->shape() != state.m[i].shape())
      throw Error(ErrorKind::Shape, "adam_step: shape mismatch for parameter " + std::to_string(i));
    const auto g = grads[i]->data();
    for (std::size_t j = 0; j < g.size(); ++j)
      if (!std::isfinite(g[j]))
        throw Error(ErrorKind::Numerical, "adam_step: non-finite gradient " + format_double(g[j]) +
                                              " in parameter " + std::to_string(i) + " element " +
                                              std::to_string(j) + " at step " + std::to_string(state.t + 1));
  }

  state.t += 1;
  const double t = static_cast<double>(state.t);
  const double bc1 = 1.0 - std::pow(config.beta1, t);
  const double bc2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    auto theta = params[i]->data();
    const auto g = grads[i]->data();
    auto m = state.m[i].data();
    auto v = state.v[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double m_hat = m[j] / bc1;
      const double v_hat = v[j] / bc2;
      theta[j] -= config.learning_rate * m_hat / (std::sqrt(v_hat) + config.epsilon);
    }
  }
}

void adam_step(nn::ModelParameters& params, AdamState& state, const TrainConfig& config) {
  std::vector<ag::Tensor*> p;
  std::vector<ag::Tensor> g;
  g.reserve(params.tensors.size());
  for (auto& [name, var] : params.tensors) {
    p.push_back(&var.mutable_value());
    g.push_back(var.grad());
  }
  std::vector<const ag::Tensor*> gp;
  for (const ag::Tensor& t : g) gp.push_back(&t);
  adam_step(p, gp, state, config);
}

void TrainingHistory::write_csv(std::ostream& out) const {
  out << "epoch,train_mse,holdout_mse\n";
  for (const EpochRecord& e : epochs)
    out << e.epoch << ',' << format_double(e.train_mse) << ',' << format_double(e.holdout_mse) << '\n';
}

void TrainingHistory::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::Io, "cannot write history '" + path.string() + "'");
  write_csv(out);
}

double rows_mse(const nn::Model& model, const data::Dataset& dataset, std::span<const std::size_t> rows) {
  if (rows.empty()) throw Error(ErrorKind::InvalidArgument, "mse over zero rows");
  std::vector<const data::Patch*> patches;
  patches.reserve(rows.size());
  for (std::size_t r : rows) patches.push_back(&dataset.patches[r]);
  const std::vector<double> pred = nn::predict(model, patches);
  double acc = 0.0;
  for (std::size_t i = 0; i < rows.size(); ++i) {
    const double d = pred[i] - dataset.targets[rows[i]];
    acc += d * d;
  }
  return acc / static_cast<double>(rows.size());
}

TrainResult train(const nn::ModelParameters& initial, const data::Dataset& dataset,
                  const data::FoldAssignment& folds, const nn::ArchConfig& arch,
                  const TrainConfig& config, const TrainHooks& hooks) {
  config.validate();
  folds.validate();
  dataset.validate();
  if (dataset.fold_labels.size() != dataset.size() || dataset.k_folds != folds.k_folds)
    throw Error(ErrorKind::InvalidArgument, "dataset folds are not assigned for this fold layout");

  const std::vector<std::size_t> train_rows = data::training_rows(dataset, folds);
  const std::vector<std::size_t> monitor_rows = data::rows_in_fold(dataset, folds.monitor_fold());
  if (train_rows.empty()) throw Error(ErrorKind::InvalidArgument, "training folds are empty");
  if (monitor_rows.empty()) throw Error(ErrorKind::InvalidArgument, "monitor fold is empty");

  double mean = 0.0;
  for (std::size_t r : train_rows) mean += dataset.targets[r];
  mean /= static_cast<double>(train_rows.size());
  double var = 0.0;
  for (std::size_t r : train_rows) var += (dataset.targets[r] - mean) * (dataset.targets[r] - mean);
  var /= static_cast<double>(train_rows.size());
  const double sd = var > 0.0 ? std::sqrt(var) : 1.0;

  nn::Model model{arch, initial.clone(), mean, sd};
  nn::ModelParameters best = model.params.clone();
  AdamState adam = AdamState::zeros_like(model.params);

  TrainingHistory history;
  history.initial_train_mse = rows_mse(model, dataset, train_rows);
  history.best_holdout_mse = INFINITY;

  const std::size_t k = arch.input_size;
  std::vector<std::size_t> order(train_rows);
  std::vector<const data::Patch*> batch_patches;

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    order = train_rows;
    Rng shuffle_rng = make_rng(config.seed, {streams::kShuffle, epoch});
    std::shuffle(order.begin(), order.end(), shuffle_rng);

    double loss_sum = 0.0;
    std::size_t batch_index = 0;
    for (std::size_t first = 0; first < order.size(); first += config.batch_size, ++batch_index) {
      const std::size_t n = std::min(config.batch_size, order.size() - first);
      const std::span<const std::size_t> rows(order.data() + first, n);
      for (std::size_t r : rows)
        if (!folds.is_training_fold(dataset.fold_labels[r]))
          throw std::logic_error("batch sampler drew a held-out row");
      if (hooks.on_batch) hooks.on_batch(rows);

      batch_patches.clear();
      ag::Tensor target({n});
      for (std::size_t i = 0; i < n; ++i) {
        batch_patches.push_back(&dataset.patches[rows[i]]);
        target[i] = (dataset.targets[rows[i]] - mean) / sd;
      }
      const ag::Var x(nn::pack_batch(batch_patches, k));
      const std::uint64_t noise_seed = stream_seed(config.seed, {streams::kLayerNoise, epoch, batch_index});
      const ag::Var pred = nn::forward(model.params, arch, x, ag::Mode::Train, noise_seed);
      const ag::Var loss = ag::mse_loss(pred, ag::Var(std::move(target)));
      model.params.zero_grads();
      ag::backward(loss);
      try {
        adam_step(model.params, adam, config);
      } catch (const Error& e) {
        throw TrainingDiverged(std::string(e.what()) + " (epoch " + std::to_string(epoch) + ")", history);
      }
      loss_sum += loss.value()[0] * static_cast<double>(n);
    }
    model.params.zero_grads();

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mse = loss_sum / static_cast<double>(order.size()) * sd * sd;
    rec.holdout_mse = rows_mse(model, dataset, monitor_rows);
    history.epochs.push_back(rec);
    if (hooks.on_epoch) hooks.on_epoch(rec);
    if (!std::isfinite(rec.holdout_mse) || !std::isfinite(rec.train_mse)) {
      history.stop_reason = "diverged";
      throw TrainingDiverged("holdout MSE became non-finite at epoch " + std::to_string(epoch), history);
    }
    if (rec.holdout_mse < history.best_holdout_mse) {
      history.best_holdout_mse = rec.holdout_mse;
      history.best_epoch = epoch;
      best.copy_values_from(model.params);
    }
    if (config.early_stop_patience && epoch - history.best_epoch >= *config.early_stop_patience) {
      history.stop_reason = "early_stop";
      break;
    }
  }
  if (history.stop_reason.empty()) history.stop_reason = "max_epochs";
  model.params.copy_values_from(best);
  return TrainResult{std::move(model), std::move(history)};
}

}  // namespace deepcov::train
