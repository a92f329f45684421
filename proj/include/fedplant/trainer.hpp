#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedplant/data.hpp"
#include "fedplant/model.hpp"

namespace fedplant {

struct LocalTrainConfig {
  int epochs = 5;
  int batch_size = 32;
  double eta = 0.01;
  uint64_t shuffle_seed = 0;

  void validate() const;
};

// What leaves the plant: parameters, the sample count, and one scalar loss.
struct LocalUpdate {
  uint32_t plant_id = 0;
  ParameterVector params;
  uint64_t n_samples = 0;
  double train_loss_final = 0.0;
};

struct EvalMetrics {
  double mse = 0.0;
  double mae = 0.0;
  double r2 = 0.0;
};

// Mini-batch SGD epochs starting from `params`. The shuffle for epoch e is
// keyed by shuffle_seed + epoch_offset + e; the final short batch is kept.
// Returns the mean per-sample training loss of each epoch (measured at the
// pre-update parameters of each batch).
std::vector<double> run_epochs(ParameterVector& params,
                               const ModelArchitecture& arch,
                               const PlantDataset& train_set, int epochs,
                               int batch_size, double eta, uint64_t shuffle_seed,
                               uint64_t epoch_offset, const std::string& who);

// One plant's local phase: E epochs from the received global parameters.
LocalUpdate train_local(const ParameterVector& global_params,
                        const ModelArchitecture& arch,
                        const PlantDataset& train_set,
                        const LocalTrainConfig& cfg, uint32_t plant_id);

// MSE / MAE / R^2 in de-normalized target units so values are comparable
// across paradigms with different normalization stats.
EvalMetrics evaluate(const ParameterVector& params, const ModelArchitecture& arch,
                     const PlantDataset& test_set, const NormalizationStats& stats);

}  // namespace fedplant
