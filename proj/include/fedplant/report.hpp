#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "fedplant/coordinator.hpp"
#include "fedplant/trainer.hpp"

namespace fedplant {

// All artifact writers produce byte-deterministic output for identical
// inputs: fixed key order, shortest-round-trip number formatting, no
// timestamps. wall_time_ms is deliberately not serialized.

std::string rounds_to_jsonl(const std::vector<RoundRecord>& records);
std::string epochs_to_jsonl(const std::vector<double>& epoch_losses);

struct RunMetrics {
  std::string mode;  // "federated" | "centralized" | "local"
  uint64_t master_seed = 0;
  std::string data_fingerprint;
  std::string config_echo;
  std::map<std::string, EvalMetrics> plants;
};

std::string metrics_to_json(const RunMetrics& run);
RunMetrics parse_metrics_json(const std::string& text);

// FNV-1a over the concatenated per-plant CSV bytes, hex encoded.
std::string data_fingerprint(const std::vector<std::string>& csv_bytes_in_plant_order);

struct ComparisonInputs {
  RunMetrics federated;
  RunMetrics centralized;
  RunMetrics local;
  std::string federated_rounds_jsonl;
  std::string centralized_epochs_jsonl;
};

// Cross-checks seeds/data/config across the three runs, then renders the
// combined report. improvement_k = 100 * (1 - fed_mse_k / local_mse_k).
std::string build_report_json(const ComparisonInputs& inputs);
std::string build_table_csv(const ComparisonInputs& inputs);

}  // namespace fedplant
