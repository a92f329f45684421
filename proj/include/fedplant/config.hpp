#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "fedplant/coordinator.hpp"
#include "fedplant/data.hpp"

namespace fedplant {

// Declarative experiment configuration: flat key=value with [sections].
// Every hyperparameter left open by the problem setting appears here with
// its default. FEDPLANT_SEED in the environment overrides master_seed.
struct ExperimentConfig {
  uint64_t master_seed = 42;

  // [model]
  std::vector<int> hidden_layers{64, 64};
  Activation activation = Activation::kRelu;

  // [data]
  DataConfig data;

  // [train]
  int epochs = 5;
  int batch_size = 32;
  double eta = 0.01;

  // [federated]
  int rounds = 40;
  WeightsMode weighting = WeightsMode::kFedAvg;
  bool secure = true;
  double alpha_mean = 1.0;
  std::vector<double> alpha_overrides;  // empty = compute from losses
  int timeout_ms = kDefaultPhaseTimeoutMs;

  // [secure]
  QuantizationSpec quant;
  uint64_t mask_seed = 0;
  bool mask_seed_set = false;

  // [synthetic] and [plant_*]
  SyntheticConfig synthetic;

  ModelArchitecture arch() const;
  std::vector<PlantSpec> plant_specs() const;  // ids 1..K in config order
  FederatedConfig federated() const;

  static ExperimentConfig defaults();
};

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config_file(const std::string& path);

// Canonical config rendering (used for the report's config echo).
std::string render_config(const ExperimentConfig& cfg);

}  // namespace fedplant
