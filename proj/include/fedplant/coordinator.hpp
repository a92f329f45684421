#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedplant/data.hpp"
#include "fedplant/model.hpp"
#include "fedplant/secure_agg.hpp"
#include "fedplant/trainer.hpp"
#include "fedplant/transport.hpp"

namespace fedplant {

struct PlantSpec {
  uint32_t id = 0;
  std::string name;  // e.g. "plant_A"
};

struct FederatedConfig {
  int rounds = 40;
  std::vector<PlantSpec> plants;  // ascending unique ids
  ModelArchitecture arch;
  LocalTrainConfig local_cfg;
  WeightsMode weighting_mode = WeightsMode::kFedAvg;
  std::vector<double> alpha_overrides;  // aligned with plants; empty = none
  double alpha_mean = 1.0;
  QuantizationSpec quant;
  bool secure = true;
  uint64_t master_seed = 42;
  uint64_t mask_group_seed = 0;
  int timeout_ms = kDefaultPhaseTimeoutMs;

  void validate() const;
};

// w_k = N_k / sum N_j.
std::vector<double> fedavg_weights(const std::vector<uint64_t>& sample_counts);

// w_k = alpha_k N_k / sum alpha_j N_j.
std::vector<double> adaptive_weights(const std::vector<uint64_t>& sample_counts,
                                     const std::vector<double>& alphas);

// Default alpha rule when no overrides are configured: alpha_k =
// ln(1 + 1/mse_k), rescaled to the configured mean. Lower loss, larger
// voice.
std::vector<double> compute_alpha(const std::vector<double>& local_mse,
                                  double alpha_mean = 1.0);

// Fixed ascending-plant-order weighted sum, so permuting inputs cannot
// change the result.
ParameterVector plaintext_aggregate(
    const std::vector<std::pair<uint32_t, ParameterVector>>& updates,
    const std::vector<double>& weights_by_position);

struct RoundRecord {
  uint32_t round = 0;
  double global_train_mse = 0.0;  // N_k-weighted, de-normalized units
  std::map<std::string, double> per_plant_test_mse;
  std::map<std::string, double> weights_used;
  double wall_time_ms = 0.0;  // never serialized: outputs must be reproducible
};

struct FederatedResult {
  ParameterVector final_params;
  std::vector<RoundRecord> rounds;
  std::map<std::string, EvalMetrics> final_metrics;
};

// Server side of the protocol: handshake with every configured plant, then
// per round broadcast -> barrier on K updates -> aggregate -> evaluate.
// `prepared` is the coordinator's own copy of each plant's splits, aligned
// with config.plants; it is used for weights and evaluation only.
FederatedResult run_server(const FederatedConfig& config,
                           const std::vector<PreparedPlant>& prepared,
                           Listener& listener);

// Plant side: everything the client needs locally. Raw samples never enter
// any message; only parameters, the sample count, and a scalar loss leave.
struct ClientContext {
  uint32_t plant_id = 0;
  ModelArchitecture arch;
  LocalTrainConfig base_cfg;  // shuffle_seed is the run-wide base
  bool secure = true;
  uint64_t mask_group_seed = 0;
  PlantDataset train_set;
  int timeout_ms = kDefaultPhaseTimeoutMs;
};

void run_client(const ClientContext& ctx, Channel& channel);

// In-process deployment: spawns one client thread per plant and runs the
// server on the calling thread. Bit-identical to the TCP deployment.
FederatedResult run_federated(const FederatedConfig& config,
                              const std::vector<RawPlantTable>& tables,
                              const DataConfig& data_cfg);

struct CentralizedResult {
  ParameterVector params;
  std::vector<double> epoch_losses;  // normalized training loss per epoch
  std::map<std::string, EvalMetrics> metrics;
};

// Baseline: all plants' training splits pooled (each in its own normalized
// space), one model trained for rounds * E epochs.
CentralizedResult run_centralized(const FederatedConfig& config,
                                  const std::vector<RawPlantTable>& tables,
                                  const DataConfig& data_cfg);

struct LocalOnlyPlantResult {
  ParameterVector params;
  EvalMetrics metrics;
};

// Baseline: each plant trains alone for rounds * E epochs.
std::map<std::string, LocalOnlyPlantResult> run_local_only(
    const FederatedConfig& config, const std::vector<RawPlantTable>& tables,
    const DataConfig& data_cfg);

}  // namespace fedplant
