#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <sstream>

#include "fedplant/data.hpp"
#include "fedplant/errors.hpp"
#include "fedplant/rng.hpp"

using namespace fedplant;

namespace {

WindowSpec spec_xy(int t_len = 1, int horizon = 0) {
  WindowSpec spec;
  spec.window_length = t_len;
  spec.horizon = horizon;
  spec.feature_columns = {"x"};
  spec.target_columns = {"y"};
  return spec;
}

std::string csv_of(const std::vector<std::pair<double, double>>& xy) {
  std::ostringstream out;
  out << "timestamp,x,y\n";
  for (std::size_t i = 0; i < xy.size(); ++i) {
    out << i << "," << xy[i].first << "," << xy[i].second << "\n";
  }
  return out.str();
}

double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

}  // namespace

TEST_CASE("parse_csv basics") {
  const auto table = parse_csv("timestamp,x,y\n0,1.5,2\n1,3,4\n", "p");
  CHECK(table.n_rows() == 2);
  CHECK(table.columns == std::vector<std::string>{"x", "y"});
  CHECK(*table.rows[0][0] == doctest::Approx(1.5));
  CHECK(table.timestamps[1] == "1");
}

TEST_CASE("parse_csv: empty cell is missing, not zero") {
  const auto table = parse_csv("timestamp,x,y\n0,,2\n1,3,4\n", "p");
  CHECK_FALSE(table.rows[0][0].has_value());
  CHECK(table.rows[0][1].has_value());
  // Non-numeric tokens also parse as missing.
  const auto t2 = parse_csv("timestamp,x,y\n0,n/a,2\n1,3,4\n", "p");
  CHECK_FALSE(t2.rows[0][0].has_value());
}

TEST_CASE("parse_csv rejects unordered, duplicate, ragged, empty") {
  CHECK_THROWS_AS(parse_csv("timestamp,x\n2,1\n1,2\n", "p"), DataError);
  CHECK_THROWS_AS(parse_csv("timestamp,x\n1,1\n1,2\n", "p"), DataError);
  CHECK_THROWS_AS(parse_csv("timestamp,x\n1,1,9\n", "p"), DataError);
  CHECK_THROWS_AS(parse_csv("", "p"), DataError);
  CHECK_THROWS_AS(parse_csv("timestamp,x\n", "p"), DataError);
}

TEST_CASE("parse_csv accepts ISO-8601 timestamps in order") {
  const auto table =
      parse_csv("timestamp,x\n2024-01-01T00:00:00,1\n2024-01-01T00:05:00,2\n", "p");
  CHECK(table.n_rows() == 2);
  CHECK_THROWS_AS(
      parse_csv("timestamp,x\n2024-01-02T00:00:00,1\n2024-01-01T00:00:00,2\n", "p"),
      DataError);
}

TEST_CASE("clean: identity when nothing to drop") {
  const auto table = parse_csv(csv_of({{1, 2}, {2, 3}, {3, 4}, {2, 3}}), "p");
  CHECK(clean(table) == table);
}

TEST_CASE("clean drops rows with missing cells") {
  std::ostringstream csv;
  csv << "timestamp,x\n";
  for (int i = 0; i < 10; ++i) {
    if (i == 4) {
      csv << i << ",\n";
    } else {
      csv << i << "," << (i % 3) << "\n";
    }
  }
  const auto cleaned = clean(parse_csv(csv.str(), "p"));
  CHECK(cleaned.n_rows() == 9);
}

TEST_CASE("clean drops a 10-MAD-scale outlier among 100 normal rows") {
  Rng rng(99);
  std::vector<double> values;
  for (int i = 0; i < 100; ++i) values.push_back(10.0 + rng.uniform(-1.0, 1.0));

  // Direct median/MAD computation is the oracle for where the outlier sits.
  const double med = median_of(values);
  std::vector<double> devs;
  for (double v : values) devs.push_back(std::abs(v - med));
  const double mad_scale = median_of(devs) * 1.4826;
  const double outlier = med + 10.0 * mad_scale;

  std::ostringstream csv;
  csv << "timestamp,x\n";
  for (int i = 0; i < 100; ++i) csv << i << "," << values[static_cast<std::size_t>(i)] << "\n";
  csv << 100 << "," << outlier << "\n";

  const auto cleaned = clean(parse_csv(csv.str(), "p"), 5.0);
  CHECK(cleaned.n_rows() == 100);
  for (const auto& row : cleaned.rows) CHECK(*row[0] < outlier - 1e-9);
}

TEST_CASE("clean errors when everything is dropped") {
  CHECK_THROWS_AS(clean(parse_csv("timestamp,x\n0,\n1,\n", "p")), DataError);
}

TEST_CASE("clean is idempotent on randomized messy tables") {
  Rng rng(31337);
  for (int trial = 0; trial < 40; ++trial) {
    std::ostringstream csv;
    csv << "timestamp,a,b\n";
    const int rows = 30 + static_cast<int>(rng.next_index(60));
    for (int i = 0; i < rows; ++i) {
      csv << i;
      for (int c = 0; c < 2; ++c) {
        csv << ",";
        const double roll = rng.next_double();
        if (roll < 0.05) {
          // missing
        } else if (roll < 0.12) {
          csv << 50.0 + 40.0 * rng.next_gaussian();  // spike
        } else {
          csv << 5.0 + rng.next_gaussian();
        }
      }
      csv << "\n";
    }
    RawPlantTable table;
    try {
      table = clean(parse_csv(csv.str(), "p"));
    } catch (const DataError&) {
      continue;  // trial degenerated to an empty table
    }
    CHECK(clean(table) == table);
  }
}

TEST_CASE("fit/apply normalization identities") {
  const auto table = parse_csv("timestamp,x,y\n0,0,5\n1,2,5\n", "p");
  const auto stats = fit_normalization(table, spec_xy(), 2);
  CHECK(stats.feature_mean[0] == doctest::Approx(1.0));
  CHECK(stats.feature_std[0] == doctest::Approx(1.0));  // population std of {0,2}
  const auto normalized = apply_normalization(table, spec_xy(), stats);
  CHECK(*normalized.rows[0][0] == doctest::Approx(-1.0));
  CHECK(*normalized.rows[1][0] == doctest::Approx(1.0));

  // Constant column clamps its std and normalizes to zero.
  CHECK(stats.target_std[0] == doctest::Approx(1e-8));
  CHECK(stats.clamped_columns == std::vector<std::string>{"y"});
  CHECK(*normalized.rows[0][1] == doctest::Approx(0.0));
}

TEST_CASE("apply(fit(X), X) has column mean ~0 and std ~1") {
  Rng rng(4242);
  std::ostringstream csv;
  csv << "timestamp,x,y\n";
  const int rows = 257;
  for (int i = 0; i < rows; ++i) {
    csv << i << "," << 3.0 + 2.5 * rng.next_gaussian() << ","
        << -7.0 + 0.5 * rng.next_gaussian() << "\n";
  }
  const auto table = parse_csv(csv.str(), "p");
  const auto stats = fit_normalization(table, spec_xy(), table.n_rows());
  const auto normalized = apply_normalization(table, spec_xy(), stats);
  for (std::size_t c = 0; c < 2; ++c) {
    double sum = 0.0;
    for (const auto& row : normalized.rows) sum += *row[c];
    const double mean = sum / static_cast<double>(rows);
    double ss = 0.0;
    for (const auto& row : normalized.rows) ss += (*row[c] - mean) * (*row[c] - mean);
    const double stddev = std::sqrt(ss / static_cast<double>(rows));
    CHECK(std::abs(mean) < 1e-10);
    CHECK(std::abs(stddev - 1.0) < 1e-10);
  }
}

TEST_CASE("make_windows: counts and layout") {
  // 5 rows, T=3, horizon 0 -> 3 samples.
  const auto t5 = parse_csv(csv_of({{1, 0}, {2, 0}, {3, 0}, {4, 0}, {5, 0}}), "p");
  CHECK(make_windows(t5, spec_xy(3)).n_samples() == 3);

  // T=1 reproduces the raw feature rows.
  const auto ds1 = make_windows(t5, spec_xy(1));
  CHECK(ds1.n_samples() == 5);
  CHECK(ds1.inputs.at(0, 0) == doctest::Approx(1.0));
  CHECK(ds1.inputs.at(4, 0) == doctest::Approx(5.0));

  // Features [1],[2],[3],[4] with T=2 -> inputs [1,2],[2,3],[3,4], oldest first.
  const auto t4 = parse_csv(csv_of({{1, 10}, {2, 20}, {3, 30}, {4, 40}}), "p");
  const auto ds2 = make_windows(t4, spec_xy(2));
  REQUIRE(ds2.n_samples() == 3);
  CHECK(ds2.inputs.at(0, 0) == doctest::Approx(1.0));
  CHECK(ds2.inputs.at(0, 1) == doctest::Approx(2.0));
  CHECK(ds2.inputs.at(1, 0) == doctest::Approx(2.0));
  CHECK(ds2.inputs.at(1, 1) == doctest::Approx(3.0));
  CHECK(ds2.inputs.at(2, 0) == doctest::Approx(3.0));
  CHECK(ds2.inputs.at(2, 1) == doctest::Approx(4.0));
  // Target aligns with the window's last row.
  CHECK(ds2.targets.at(0, 0) == doctest::Approx(20.0));
  CHECK(ds2.targets.at(2, 0) == doctest::Approx(40.0));

  CHECK_THROWS_AS(make_windows(t4, spec_xy(5)), DataError);
}

TEST_CASE("make_windows respects the horizon offset") {
  const auto t = parse_csv(csv_of({{1, 10}, {2, 20}, {3, 30}, {4, 40}, {5, 50}}), "p");
  const auto ds = make_windows(t, spec_xy(2, 1));
  REQUIRE(ds.n_samples() == 3);
  CHECK(ds.targets.at(0, 0) == doctest::Approx(30.0));  // window rows 0-1, target row 2
  CHECK(ds.targets.at(2, 0) == doctest::Approx(50.0));
}

TEST_CASE("window count formula over 200 random shapes") {
  Rng rng(777);
  for (int trial = 0; trial < 200; ++trial) {
    const int t_len = 1 + static_cast<int>(rng.next_index(6));
    const int horizon = static_cast<int>(rng.next_index(4));
    const int rows = t_len + horizon + static_cast<int>(rng.next_index(40));
    std::vector<std::pair<double, double>> xy;
    for (int i = 0; i < rows; ++i) xy.emplace_back(i, 2 * i);
    const auto ds = make_windows(parse_csv(csv_of(xy), "p"), spec_xy(t_len, horizon));
    CHECK(ds.n_samples() == static_cast<std::size_t>(rows - t_len - horizon + 1));
  }
}

TEST_CASE("chrono_split boundaries") {
  PlantDataset ds;
  ds.plant_id = "p";
  ds.inputs = Matrix(10, 1);
  ds.targets = Matrix(10, 1);
  for (std::size_t i = 0; i < 10; ++i) ds.inputs.at(i, 0) = static_cast<double>(i);

  const auto split = chrono_split(ds, 0.8);
  CHECK(split.train.n_samples() == 8);
  CHECK(split.test.n_samples() == 2);
  CHECK(split.train.inputs.at(7, 0) == doctest::Approx(7.0));
  CHECK(split.test.inputs.at(0, 0) == doctest::Approx(8.0));  // chronological

  PlantDataset two;
  two.inputs = Matrix(2, 1);
  two.targets = Matrix(2, 1);
  const auto half = chrono_split(two, 0.5);
  CHECK(half.train.n_samples() == 1);
  CHECK(half.test.n_samples() == 1);

  PlantDataset three;
  three.inputs = Matrix(3, 1);
  three.targets = Matrix(3, 1);
  CHECK_THROWS_AS(chrono_split(three, 0.9), DataError);  // empty test side
  CHECK_THROWS_AS(chrono_split(three, 0.0), ContractViolation);
  CHECK_THROWS_AS(chrono_split(three, 1.0), ContractViolation);
}

TEST_CASE("synthetic generator: determinism and shape") {
  const auto cfg = SyntheticConfig::defaults();
  const auto a = generate_synthetic_plants(cfg, 11);
  const auto b = generate_synthetic_plants(cfg, 11);
  REQUIRE(a.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) CHECK(render_csv(a[i]) == render_csv(b[i]));

  const auto c = generate_synthetic_plants(cfg, 12);
  CHECK(render_csv(a[0]) != render_csv(c[0]));

  // Plant B is data-poor by default.
  CHECK(a[1].n_rows() < a[0].n_rows());
  CHECK(a[1].n_rows() < a[2].n_rows());
  CHECK(a[0].plant_id == "plant_A");
  CHECK(a[0].columns == std::vector<std::string>{"temperature", "pressure", "flow",
                                                 "concentration", "yield"});

  // Some cells should be blanked at the default missing fraction.
  std::size_t missing = 0;
  for (const auto& table : a) {
    for (const auto& row : table.rows) {
      for (const auto& cell : row) {
        if (!cell) ++missing;
      }
    }
  }
  CHECK(missing > 0);
}

TEST_CASE("synthetic generator output survives the full pipeline") {
  const auto tables = generate_synthetic_plants(SyntheticConfig::defaults(), 5);
  DataConfig cfg;
  cfg.window.window_length = 4;
  cfg.window.feature_columns = {"temperature", "pressure", "flow", "concentration"};
  cfg.window.target_columns = {"yield"};
  for (const auto& table : tables) {
    const auto prepared = prepare_plant(table, cfg);
    CHECK(prepared.split.train.n_samples() > 0);
    CHECK(prepared.split.test.n_samples() > 0);
    CHECK(prepared.split.train.inputs.cols() == 16);
    for (double v : prepared.split.train.inputs.data()) CHECK(std::isfinite(v));
  }
}

TEST_CASE("synthetic config validation") {
  SyntheticConfig cfg = SyntheticConfig::defaults();
  cfg.plants[0].samples = 1;
  CHECK_THROWS_AS(generate_synthetic_plants(cfg, 1), ConfigError);
  cfg = SyntheticConfig::defaults();
  cfg.missing_fraction = 1.5;
  CHECK_THROWS_AS(generate_synthetic_plants(cfg, 1), ConfigError);
  cfg = SyntheticConfig::defaults();
  cfg.plants[2].range_lo[0] = cfg.plants[2].range_hi[0];
  CHECK_THROWS_AS(generate_synthetic_plants(cfg, 1), ConfigError);
}
