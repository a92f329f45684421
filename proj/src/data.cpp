#include "fedplant/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "fedplant/errors.hpp"
#include "fedplant/rng.hpp"

namespace fedplant {

namespace {

std::optional<double> parse_number(std::string_view token) {
  // Trim ASCII whitespace and CR left over from CRLF line endings.
  while (!token.empty() && (token.front() == ' ' || token.front() == '\t')) {
    token.remove_prefix(1);
  }
  while (!token.empty() &&
         (token.back() == ' ' || token.back() == '\t' || token.back() == '\r')) {
    token.remove_suffix(1);
  }
  if (token.empty()) return std::nullopt;
  double value = 0.0;
  const char* end = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(token.data(), end, value);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return value;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> cells;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      cells.push_back(line.substr(start));
      break;
    }
    cells.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return cells;
}

std::string trim(std::string s) {
  while (!s.empty() && (s.back() == '\r' || s.back() == ' ' || s.back() == '\t')) s.pop_back();
  std::size_t i = 0;
  while (i < s.size() && (s[i] == ' ' || s[i] == '\t')) ++i;
  return s.substr(i);
}

// Timestamps compare numerically when both sides parse as numbers,
// lexicographically otherwise (ISO-8601 strings sort correctly that way).
int compare_timestamps(const std::string& a, const std::string& b) {
  const auto na = parse_number(a);
  const auto nb = parse_number(b);
  if (na && nb) {
    if (*na < *nb) return -1;
    if (*na > *nb) return 1;
    return 0;
  }
  return a.compare(b);
}

double median_of(std::vector<double> values) {
  const std::size_t n = values.size();
  std::sort(values.begin(), values.end());
  if (n % 2 == 1) return values[n / 2];
  return 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

}  // namespace

int RawPlantTable::column_index(const std::string& name) const {
  for (std::size_t i = 0; i < columns.size(); ++i) {
    if (columns[i] == name) return static_cast<int>(i);
  }
  return -1;
}

void WindowSpec::validate() const {
  if (window_length < 1) throw ConfigError("window length must be >= 1");
  if (horizon < 0) throw ConfigError("horizon must be >= 0");
  if (feature_columns.empty() || target_columns.empty()) {
    throw ConfigError("feature and target column lists must be nonempty");
  }
  for (const auto& f : feature_columns) {
    for (const auto& t : target_columns) {
      if (f == t) throw ConfigError("feature and target columns must be disjoint: " + f);
    }
  }
}

RawPlantTable parse_csv(const std::string& bytes, const std::string& plant_id) {
  std::istringstream in(bytes);
  std::string line;
  if (!std::getline(in, line) || trim(line).empty()) {
    throw DataError(plant_id + ": empty CSV");
  }
  RawPlantTable table;
  table.plant_id = plant_id;
  auto header = split_line(line);
  if (header.size() < 2) throw DataError(plant_id + ": CSV needs a timestamp and at least one value column");
  table.timestamp_column = trim(header[0]);
  for (std::size_t i = 1; i < header.size(); ++i) table.columns.push_back(trim(header[i]));

  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    auto cells = split_line(line);
    if (cells.size() != header.size()) {
      throw DataError(plant_id + ": ragged row at line " + std::to_string(line_no));
    }
    const std::string ts = trim(cells[0]);
    if (!table.timestamps.empty()) {
      const int cmp = compare_timestamps(table.timestamps.back(), ts);
      if (cmp == 0) throw DataError(plant_id + ": duplicate timestamp at line " + std::to_string(line_no));
      if (cmp > 0) throw DataError(plant_id + ": timestamps not increasing at line " + std::to_string(line_no));
    }
    table.timestamps.push_back(ts);
    std::vector<std::optional<double>> row;
    row.reserve(table.columns.size());
    for (std::size_t i = 1; i < cells.size(); ++i) row.push_back(parse_number(cells[i]));
    table.rows.push_back(std::move(row));
  }
  if (table.rows.empty()) throw DataError(plant_id + ": CSV has a header but no data rows");
  return table;
}

std::string render_csv(const RawPlantTable& table) {
  std::string out = table.timestamp_column;
  for (const auto& c : table.columns) {
    out += ',';
    out += c;
  }
  out += '\n';
  char buf[64];
  for (std::size_t r = 0; r < table.n_rows(); ++r) {
    out += table.timestamps[r];
    for (const auto& cell : table.rows[r]) {
      out += ',';
      if (cell) {
        std::snprintf(buf, sizeof(buf), "%.6f", *cell);
        out += buf;
      }
    }
    out += '\n';
  }
  return out;
}

RawPlantTable clean(const RawPlantTable& table, double outlier_k) {
  RawPlantTable out = table;

  // Pass 1: drop rows with any missing cell.
  {
    std::vector<std::string> ts;
    std::vector<std::vector<std::optional<double>>> rows;
    for (std::size_t r = 0; r < out.n_rows(); ++r) {
      const bool complete = std::all_of(out.rows[r].begin(), out.rows[r].end(),
                                        [](const auto& c) { return c.has_value(); });
      if (complete) {
        ts.push_back(out.timestamps[r]);
        rows.push_back(out.rows[r]);
      }
    }
    out.timestamps = std::move(ts);
    out.rows = std::move(rows);
  }
  if (out.rows.empty()) throw DataError(table.plant_id + ": all rows removed by cleaning");

  // Pass 2: median/MAD outlier filter, repeated until stable. Columns with
  // MAD == 0 carry no scale information and are skipped.
  bool changed = true;
  while (changed) {
    changed = false;
    const std::size_t n_cols = out.columns.size();
    std::vector<double> medians(n_cols), thresholds(n_cols);
    std::vector<bool> active(n_cols, false);
    for (std::size_t c = 0; c < n_cols; ++c) {
      std::vector<double> col(out.n_rows());
      for (std::size_t r = 0; r < out.n_rows(); ++r) col[r] = *out.rows[r][c];
      const double med = median_of(col);
      for (double& v : col) v = std::abs(v - med);
      const double mad = median_of(std::move(col));
      if (mad > 0.0) {
        medians[c] = med;
        thresholds[c] = outlier_k * mad * 1.4826;
        active[c] = true;
      }
    }
    std::vector<std::string> ts;
    std::vector<std::vector<std::optional<double>>> rows;
    for (std::size_t r = 0; r < out.n_rows(); ++r) {
      bool keep = true;
      for (std::size_t c = 0; c < n_cols && keep; ++c) {
        if (active[c] && std::abs(*out.rows[r][c] - medians[c]) > thresholds[c]) keep = false;
      }
      if (keep) {
        ts.push_back(out.timestamps[r]);
        rows.push_back(out.rows[r]);
      } else {
        changed = true;
      }
    }
    out.timestamps = std::move(ts);
    out.rows = std::move(rows);
    if (out.rows.empty()) throw DataError(table.plant_id + ": all rows removed by cleaning");
  }
  return out;
}

namespace {

constexpr double kStdFloor = 1e-8;

void fit_columns(const RawPlantTable& table, const std::vector<std::string>& names,
                 std::size_t n_rows, std::vector<double>& means,
                 std::vector<double>& stds, std::vector<std::string>& clamped) {
  for (const auto& name : names) {
    const int c = table.column_index(name);
    if (c < 0) throw ConfigError("unknown column: " + name);
    double sum = 0.0;
    for (std::size_t r = 0; r < n_rows; ++r) {
      const auto& cell = table.rows[r][static_cast<std::size_t>(c)];
      if (!cell) throw DataError("missing value reached normalization; clean the table first");
      sum += *cell;
    }
    const double mean = sum / static_cast<double>(n_rows);
    double ss = 0.0;
    for (std::size_t r = 0; r < n_rows; ++r) {
      const double d = *table.rows[r][static_cast<std::size_t>(c)] - mean;
      ss += d * d;
    }
    double std_dev = std::sqrt(ss / static_cast<double>(n_rows));
    if (!(std_dev > kStdFloor)) {
      std_dev = kStdFloor;
      clamped.push_back(name);
    }
    means.push_back(mean);
    stds.push_back(std_dev);
  }
}

}  // namespace

NormalizationStats fit_normalization(const RawPlantTable& table,
                                     const WindowSpec& spec,
                                     std::size_t train_row_count) {
  spec.validate();
  if (train_row_count == 0 || train_row_count > table.n_rows()) {
    throw ContractViolation("fit_normalization: invalid train row count");
  }
  NormalizationStats stats;
  fit_columns(table, spec.feature_columns, train_row_count, stats.feature_mean,
              stats.feature_std, stats.clamped_columns);
  fit_columns(table, spec.target_columns, train_row_count, stats.target_mean,
              stats.target_std, stats.clamped_columns);
  return stats;
}

RawPlantTable apply_normalization(const RawPlantTable& table,
                                  const WindowSpec& spec,
                                  const NormalizationStats& stats) {
  RawPlantTable out = table;
  auto apply = [&out](const std::vector<std::string>& names,
                      const std::vector<double>& means,
                      const std::vector<double>& stds) {
    for (std::size_t i = 0; i < names.size(); ++i) {
      const int c = out.column_index(names[i]);
      if (c < 0) throw ConfigError("unknown column: " + names[i]);
      for (auto& row : out.rows) {
        auto& cell = row[static_cast<std::size_t>(c)];
        if (cell) cell = (*cell - means[i]) / stds[i];
      }
    }
  };
  apply(spec.feature_columns, stats.feature_mean, stats.feature_std);
  apply(spec.target_columns, stats.target_mean, stats.target_std);
  return out;
}

PlantDataset make_windows(const RawPlantTable& table, const WindowSpec& spec) {
  spec.validate();
  const int t_len = spec.window_length;
  const int horizon = spec.horizon;
  const std::size_t min_rows = static_cast<std::size_t>(t_len + horizon);
  if (table.n_rows() < min_rows) {
    throw DataError(table.plant_id + ": too few rows (" + std::to_string(table.n_rows()) +
                    ") for window length " + std::to_string(t_len) + " + horizon " +
                    std::to_string(horizon));
  }
  std::vector<int> feat_idx, targ_idx;
  for (const auto& name : spec.feature_columns) {
    const int c = table.column_index(name);
    if (c < 0) throw ConfigError("unknown feature column: " + name);
    feat_idx.push_back(c);
  }
  for (const auto& name : spec.target_columns) {
    const int c = table.column_index(name);
    if (c < 0) throw ConfigError("unknown target column: " + name);
    targ_idx.push_back(c);
  }

  const std::size_t n_samples = table.n_rows() - min_rows + 1;
  const std::size_t d = feat_idx.size();
  PlantDataset ds;
  ds.plant_id = table.plant_id;
  ds.inputs = Matrix(n_samples, d * static_cast<std::size_t>(t_len));
  ds.targets = Matrix(n_samples, targ_idx.size());

  auto cell_value = [&table](std::size_t r, int c) {
    const auto& cell = table.rows[r][static_cast<std::size_t>(c)];
    if (!cell) throw DataError(table.plant_id + ": missing value in windowing; clean the table first");
    return *cell;
  };

  for (std::size_t s = 0; s < n_samples; ++s) {
    const std::size_t window_end = s + static_cast<std::size_t>(t_len) - 1;
    std::size_t col = 0;
    for (std::size_t r = s; r <= window_end; ++r) {  // oldest first
      for (int c : feat_idx) ds.inputs.at(s, col++) = cell_value(r, c);
    }
    const std::size_t target_row = window_end + static_cast<std::size_t>(horizon);
    for (std::size_t j = 0; j < targ_idx.size(); ++j) {
      ds.targets.at(s, j) = cell_value(target_row, targ_idx[j]);
    }
  }
  return ds;
}

SplitDataset chrono_split(const PlantDataset& dataset, double fraction) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ContractViolation("chrono_split: fraction must be in (0,1)");
  }
  const std::size_t n = dataset.n_samples();
  if (n < 2) throw DataError(dataset.plant_id + ": need at least 2 samples to split");
  // ceil(fraction * n), guarded against FP representation of the fraction.
  const std::size_t train_n =
      static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n) - 1e-9));
  if (train_n == 0 || train_n >= n) {
    throw DataError(dataset.plant_id + ": split fraction " + std::to_string(fraction) +
                    " leaves an empty train or test side");
  }
  SplitDataset split;
  split.split_fraction = fraction;
  split.train.plant_id = dataset.plant_id;
  split.test.plant_id = dataset.plant_id;
  const std::size_t cols_in = dataset.inputs.cols();
  const std::size_t cols_out = dataset.targets.cols();
  split.train.inputs = Matrix(train_n, cols_in);
  split.train.targets = Matrix(train_n, cols_out);
  split.test.inputs = Matrix(n - train_n, cols_in);
  split.test.targets = Matrix(n - train_n, cols_out);
  for (std::size_t i = 0; i < n; ++i) {
    Matrix& in = i < train_n ? split.train.inputs : split.test.inputs;
    Matrix& out = i < train_n ? split.train.targets : split.test.targets;
    const std::size_t r = i < train_n ? i : i - train_n;
    for (std::size_t j = 0; j < cols_in; ++j) in.at(r, j) = dataset.inputs.at(i, j);
    for (std::size_t j = 0; j < cols_out; ++j) out.at(r, j) = dataset.targets.at(i, j);
  }
  return split;
}

SyntheticConfig SyntheticConfig::defaults() {
  SyntheticConfig cfg;
  PlantRegime a;
  a.name = "A";
  a.samples = 1000;
  PlantRegime b;
  b.name = "B";
  b.samples = 320;
  b.gain_sin = 3.3;
  b.gain_quad = 1.35;
  b.gain_cross = 2.2;
  b.offset = 11.0;
  b.range_lo = {2.2, 1.1, 0.6, 0.25};
  b.range_hi = {4.2, 2.1, 1.6, 0.85};
  PlantRegime c;
  c.name = "C";
  c.samples = 840;
  c.gain_sin = 2.7;
  c.gain_quad = 1.65;
  c.gain_cross = 1.8;
  c.offset = 9.0;
  c.range_lo = {1.8, 0.9, 0.45, 0.15};
  c.range_hi = {3.8, 1.9, 1.45, 0.75};
  cfg.plants = {a, b, c};
  return cfg;
}

void SyntheticConfig::validate() const {
  if (plants.empty()) throw ConfigError("synthetic config needs at least one plant");
  for (const auto& p : plants) {
    if (p.samples < 2) throw ConfigError("plant " + p.name + ": sample count must be >= 2");
    for (std::size_t i = 0; i < 4; ++i) {
      if (!(p.range_lo[i] < p.range_hi[i])) {
        throw ConfigError("plant " + p.name + ": invalid operating range");
      }
    }
  }
  if (noise_std < 0.0) throw ConfigError("noise_std must be >= 0");
  if (missing_fraction < 0.0 || missing_fraction >= 1.0) {
    throw ConfigError("missing_fraction must be in [0,1)");
  }
}

std::vector<RawPlantTable> generate_synthetic_plants(const SyntheticConfig& config,
                                                     uint64_t seed) {
  config.validate();
  const std::vector<std::string> feature_names = {"temperature", "pressure", "flow",
                                                  "concentration"};
  std::vector<RawPlantTable> tables;
  tables.reserve(config.plants.size());
  for (std::size_t p = 0; p < config.plants.size(); ++p) {
    const PlantRegime& regime = config.plants[p];
    uint64_t sub = seed;
    splitmix64(sub);  // advance so plant 0 with seed s differs from Rng(s) users
    Rng rng(splitmix64(sub) ^ (0x9e3779b97f4a7c15ULL * (p + 1)));

    RawPlantTable table;
    table.plant_id = "plant_" + regime.name;
    table.timestamp_column = "timestamp";
    table.columns = feature_names;
    table.columns.push_back("yield");

    // Mean-reverting walks keep features inside the plant's operating range
    // while giving the series temporal structure.
    std::array<double, 4> x{};
    std::array<double, 4> mid{}, span{};
    for (std::size_t f = 0; f < 4; ++f) {
      mid[f] = 0.5 * (regime.range_lo[f] + regime.range_hi[f]);
      span[f] = regime.range_hi[f] - regime.range_lo[f];
      x[f] = mid[f] + 0.25 * span[f] * rng.next_gaussian();
    }
    for (int i = 0; i < regime.samples; ++i) {
      for (std::size_t f = 0; f < 4; ++f) {
        x[f] += 0.25 * (mid[f] - x[f]) + 0.15 * span[f] * rng.next_gaussian();
        x[f] = std::clamp(x[f], regime.range_lo[f], regime.range_hi[f]);
      }
      const double y = regime.gain_sin * std::sin(0.8 * x[0]) +
                       regime.gain_quad * x[1] * x[1] +
                       regime.gain_cross * x[2] * x[3] + regime.offset +
                       config.noise_std * rng.next_gaussian();
      std::vector<std::optional<double>> row;
      row.reserve(5);
      for (std::size_t f = 0; f < 4; ++f) row.emplace_back(x[f]);
      row.emplace_back(y);
      for (auto& cell : row) {
        if (rng.next_double() < config.missing_fraction) cell.reset();
      }
      table.timestamps.push_back(std::to_string(i));
      table.rows.push_back(std::move(row));
    }
    tables.push_back(std::move(table));
  }
  return tables;
}

PreparedPlant prepare_plant(const RawPlantTable& raw, const DataConfig& cfg) {
  const RawPlantTable cleaned = clean(raw, cfg.outlier_k);
  const std::size_t n = cleaned.n_rows();
  const std::size_t train_rows =
      static_cast<std::size_t>(std::ceil(cfg.split_fraction * static_cast<double>(n) - 1e-9));
  if (train_rows == 0 || train_rows > n) {
    throw DataError(raw.plant_id + ": split fraction leaves no training rows");
  }
  PreparedPlant prepared;
  prepared.plant_id = cleaned.plant_id;
  prepared.stats = fit_normalization(cleaned, cfg.window, train_rows);
  const RawPlantTable normalized = apply_normalization(cleaned, cfg.window, prepared.stats);
  const PlantDataset windows = make_windows(normalized, cfg.window);
  prepared.split = chrono_split(windows, cfg.split_fraction);
  return prepared;
}

}  // namespace fedplant
