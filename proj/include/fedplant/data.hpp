#pragma once

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "fedplant/matrix.hpp"

namespace fedplant {

// One plant's raw CSV contents. `columns` excludes the timestamp column;
// `rows[i]` is aligned with `columns`, missing cells are nullopt.
struct RawPlantTable {
  std::string plant_id;
  std::string timestamp_column;
  std::vector<std::string> columns;
  std::vector<std::string> timestamps;
  std::vector<std::vector<std::optional<double>>> rows;

  std::size_t n_rows() const { return rows.size(); }
  int column_index(const std::string& name) const;  // -1 when absent

  bool operator==(const RawPlantTable&) const = default;
};

// Sliding-window layout: inputs are the last `window_length` feature rows
// concatenated oldest-first; the target sits `horizon` rows after the window.
struct WindowSpec {
  int window_length = 4;
  std::vector<std::string> feature_columns;
  std::vector<std::string> target_columns;
  int horizon = 0;

  void validate() const;
};

struct NormalizationStats {
  std::vector<double> feature_mean, feature_std;
  std::vector<double> target_mean, target_std;
  // Columns whose std was clamped to the floor (constant in the train split).
  std::vector<std::string> clamped_columns;
};

struct PlantDataset {
  std::string plant_id;
  Matrix inputs;   // N x (d*T)
  Matrix targets;  // N x p
  std::size_t n_samples() const { return inputs.rows(); }
};

struct SplitDataset {
  PlantDataset train;
  PlantDataset test;
  double split_fraction = 0.8;
};

// CSV in: UTF-8, comma separated, header row, column 1 = timestamp
// (ISO-8601 or integer). Empty/non-numeric cells parse as missing.
RawPlantTable parse_csv(const std::string& bytes, const std::string& plant_id);
std::string render_csv(const RawPlantTable& table);

// Drops rows with missing cells, then rows deviating from a column median by
// more than k_out robust standard deviations (MAD * 1.4826). The filter is
// re-applied until stable so that clean(clean(t)) == clean(t).
RawPlantTable clean(const RawPlantTable& table, double outlier_k = 5.0);

// Z-score stats over the first `train_row_count` rows (population std).
// Zero-variance columns get their std clamped to 1e-8 and are recorded.
NormalizationStats fit_normalization(const RawPlantTable& table,
                                     const WindowSpec& spec,
                                     std::size_t train_row_count);
RawPlantTable apply_normalization(const RawPlantTable& table,
                                  const WindowSpec& spec,
                                  const NormalizationStats& stats);

PlantDataset make_windows(const RawPlantTable& table, const WindowSpec& spec);

// First ceil(fraction * N) samples train, remainder test; both must be
// nonempty.
SplitDataset chrono_split(const PlantDataset& dataset, double fraction);

// Synthetic three-plant generator standing in for confidential plant data.
// Shared nonlinear backbone, plant-specific gains/offsets/operating ranges.
struct PlantRegime {
  std::string name;
  int samples = 0;
  double gain_sin = 3.0;    // coefficient on sin(0.8 * temperature)
  double gain_quad = 1.5;   // coefficient on pressure^2
  double gain_cross = 2.0;  // coefficient on flow * concentration
  double offset = 10.0;
  std::array<double, 4> range_lo{2.0, 1.0, 0.5, 0.2};
  std::array<double, 4> range_hi{4.0, 2.0, 1.5, 0.8};
};

struct SyntheticConfig {
  std::vector<PlantRegime> plants;
  double noise_std = 0.3;
  double missing_fraction = 0.01;

  static SyntheticConfig defaults();
  void validate() const;
};

std::vector<RawPlantTable> generate_synthetic_plants(const SyntheticConfig& config,
                                                     uint64_t seed);

// Everything between raw CSV and trainable splits, in pipeline order:
// clean -> fit stats on the chronological train prefix -> normalize ->
// window -> chronological split.
struct DataConfig {
  WindowSpec window;
  double split_fraction = 0.8;
  double outlier_k = 5.0;
};

struct PreparedPlant {
  std::string plant_id;
  SplitDataset split;
  NormalizationStats stats;
};

PreparedPlant prepare_plant(const RawPlantTable& raw, const DataConfig& cfg);

}  // namespace fedplant
