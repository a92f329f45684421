#include "fedplant/trainer.hpp"

#include <cmath>
#include <numeric>

#include "fedplant/errors.hpp"
#include "fedplant/rng.hpp"

namespace fedplant {

void LocalTrainConfig::validate() const {
  if (epochs < 1) throw ConfigError("epochs must be >= 1");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(eta >= 0.0)) throw ConfigError("eta must be >= 0");
}

namespace {

Matrix gather_rows(const Matrix& src, const std::vector<std::size_t>& order,
                   std::size_t begin, std::size_t end) {
  Matrix out(end - begin, src.cols());
  for (std::size_t i = begin; i < end; ++i) {
    const auto row = src.row(order[i]);
    for (std::size_t j = 0; j < src.cols(); ++j) out.at(i - begin, j) = row[j];
  }
  return out;
}

}  // namespace

std::vector<double> run_epochs(ParameterVector& params,
                               const ModelArchitecture& arch,
                               const PlantDataset& train_set, int epochs,
                               int batch_size, double eta, uint64_t shuffle_seed,
                               uint64_t epoch_offset, const std::string& who) {
  const std::size_t n = train_set.n_samples();
  if (n == 0) throw ContractViolation(who + ": empty training set");
  std::vector<double> epoch_losses;
  epoch_losses.reserve(static_cast<std::size_t>(epochs));

  std::vector<std::size_t> order(n);
  for (int e = 0; e < epochs; ++e) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng rng(shuffle_seed + epoch_offset + static_cast<uint64_t>(e));
    deterministic_shuffle(order, rng);

    double loss_sum = 0.0;  // per-sample loss accumulated over the epoch
    for (std::size_t start = 0; start < n; start += static_cast<std::size_t>(batch_size)) {
      const std::size_t stop = std::min(n, start + static_cast<std::size_t>(batch_size));
      const Matrix inputs = gather_rows(train_set.inputs, order, start, stop);
      const Matrix targets = gather_rows(train_set.targets, order, start, stop);
      const LossAndGradient lg = loss_gradient(params, arch, inputs, targets);
      if (!std::isfinite(lg.loss)) {
        throw DivergenceError(who + ": non-finite loss at epoch " +
                              std::to_string(e + 1));
      }
      loss_sum += lg.loss * static_cast<double>(stop - start);
      if (eta > 0.0) {
        try {
          params = sgd_step(params, lg.grad, eta);
        } catch (const DivergenceError&) {
          throw DivergenceError(who + ": diverged at epoch " + std::to_string(e + 1));
        }
      }
    }
    epoch_losses.push_back(loss_sum / static_cast<double>(n));
  }
  return epoch_losses;
}

LocalUpdate train_local(const ParameterVector& global_params,
                        const ModelArchitecture& arch,
                        const PlantDataset& train_set,
                        const LocalTrainConfig& cfg, uint32_t plant_id) {
  cfg.validate();
  if (global_params.values.size() != arch.parameter_count()) {
    throw ContractViolation("train_local: global parameters do not match architecture");
  }
  LocalUpdate update;
  update.plant_id = plant_id;
  update.params = global_params;
  update.n_samples = train_set.n_samples();
  const auto losses =
      run_epochs(update.params, arch, train_set, cfg.epochs, cfg.batch_size, cfg.eta,
                 cfg.shuffle_seed, 0, train_set.plant_id);
  update.train_loss_final = losses.back();
  return update;
}

EvalMetrics evaluate(const ParameterVector& params, const ModelArchitecture& arch,
                     const PlantDataset& test_set, const NormalizationStats& stats) {
  const std::size_t n = test_set.n_samples();
  if (n == 0) throw ContractViolation("evaluate: empty test set");
  const std::size_t p = test_set.targets.cols();
  if (stats.target_mean.size() != p || stats.target_std.size() != p) {
    throw ContractViolation("evaluate: normalization stats do not match target dim");
  }

  // De-normalized predictions and targets.
  Matrix pred(n, p), truth(n, p);
  for (std::size_t i = 0; i < n; ++i) {
    const auto yhat = forward(params, arch, test_set.inputs.row(i));
    for (std::size_t j = 0; j < p; ++j) {
      pred.at(i, j) = yhat[j] * stats.target_std[j] + stats.target_mean[j];
      truth.at(i, j) = test_set.targets.at(i, j) * stats.target_std[j] + stats.target_mean[j];
    }
  }

  EvalMetrics m;
  double sse = 0.0, abs_sum = 0.0;
  std::vector<double> mean(p, 0.0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      const double d = pred.at(i, j) - truth.at(i, j);
      sse += d * d;
      abs_sum += std::abs(d);
      mean[j] += truth.at(i, j);
    }
  }
  for (double& v : mean) v /= static_cast<double>(n);
  double sst = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < p; ++j) {
      const double d = truth.at(i, j) - mean[j];
      sst += d * d;
    }
  }
  m.mse = sse / static_cast<double>(n);
  m.mae = abs_sum / static_cast<double>(n * p);
  if (sst > 0.0) {
    m.r2 = 1.0 - sse / sst;
  } else if (sse == 0.0) {
    m.r2 = 1.0;
  } else {
    throw DataError(test_set.plant_id + ": degenerate test targets (zero variance)");
  }
  return m;
}

}  // namespace fedplant
