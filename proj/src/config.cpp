#include "fedplant/config.hpp"

#include <charconv>
#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>

#include "fedplant/errors.hpp"

namespace fedplant {

namespace {

std::string trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r");
  std::size_t b = s.find_last_not_of(" \t\r");
  if (a == std::string::npos) return "";
  return s.substr(a, b - a + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (start <= s.size()) {
    const std::size_t pos = s.find(',', start);
    if (pos == std::string::npos) {
      const std::string item = trim(s.substr(start));
      if (!item.empty()) out.push_back(item);
      break;
    }
    const std::string item = trim(s.substr(start, pos - start));
    if (!item.empty()) out.push_back(item);
    start = pos + 1;
  }
  return out;
}

double to_double(const std::string& key, const std::string& value) {
  try {
    std::size_t used = 0;
    const double v = std::stod(value, &used);
    if (used != value.size()) throw std::invalid_argument(value);
    return v;
  } catch (const std::exception&) {
    throw ConfigError(key + ": expected a number, got '" + value + "'");
  }
}

int64_t to_int(const std::string& key, const std::string& value) {
  int64_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError(key + ": expected an integer, got '" + value + "'");
  }
  return v;
}

uint64_t to_u64(const std::string& key, const std::string& value) {
  uint64_t v = 0;
  const auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
  if (ec != std::errc() || ptr != value.data() + value.size()) {
    throw ConfigError(key + ": expected a non-negative integer, got '" + value + "'");
  }
  return v;
}

bool to_bool(const std::string& key, const std::string& value) {
  if (value == "true" || value == "1" || value == "yes") return true;
  if (value == "false" || value == "0" || value == "no") return false;
  throw ConfigError(key + ": expected true/false, got '" + value + "'");
}

std::array<double, 2> to_range(const std::string& key, const std::string& value) {
  const auto parts = split_list(value);
  if (parts.size() != 2) throw ConfigError(key + ": expected 'lo,hi'");
  return {to_double(key, parts[0]), to_double(key, parts[1])};
}

int plant_index(const SyntheticConfig& synth, const std::string& section) {
  for (std::size_t i = 0; i < synth.plants.size(); ++i) {
    if ("plant_" + synth.plants[i].name == section) return static_cast<int>(i);
  }
  return -1;
}

}  // namespace

ExperimentConfig ExperimentConfig::defaults() {
  ExperimentConfig cfg;
  cfg.data.window.window_length = 4;
  cfg.data.window.horizon = 0;
  cfg.data.window.feature_columns = {"temperature", "pressure", "flow", "concentration"};
  cfg.data.window.target_columns = {"yield"};
  cfg.data.split_fraction = 0.8;
  cfg.data.outlier_k = 5.0;
  cfg.synthetic = SyntheticConfig::defaults();
  return cfg;
}

ModelArchitecture ExperimentConfig::arch() const {
  ModelArchitecture a;
  a.input_dim = static_cast<int>(data.window.feature_columns.size()) *
                data.window.window_length;
  a.hidden_layers = hidden_layers;
  a.output_dim = static_cast<int>(data.window.target_columns.size());
  a.activation = activation;
  return a;
}

std::vector<PlantSpec> ExperimentConfig::plant_specs() const {
  std::vector<PlantSpec> specs;
  for (std::size_t i = 0; i < synthetic.plants.size(); ++i) {
    specs.push_back(PlantSpec{static_cast<uint32_t>(i + 1),
                              "plant_" + synthetic.plants[i].name});
  }
  return specs;
}

FederatedConfig ExperimentConfig::federated() const {
  FederatedConfig fc;
  fc.rounds = rounds;
  fc.plants = plant_specs();
  fc.arch = arch();
  fc.local_cfg.epochs = epochs;
  fc.local_cfg.batch_size = batch_size;
  fc.local_cfg.eta = eta;
  fc.local_cfg.shuffle_seed = master_seed;
  fc.weighting_mode = weighting;
  fc.alpha_overrides = alpha_overrides;
  fc.alpha_mean = alpha_mean;
  fc.quant = quant;
  fc.secure = secure;
  fc.master_seed = master_seed;
  fc.mask_group_seed = mask_seed_set ? mask_seed : (master_seed ^ 0x6d61736b5f736565ULL);
  fc.timeout_ms = timeout_ms;
  return fc;
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg = ExperimentConfig::defaults();
  std::istringstream in(text);
  std::string line;
  std::string section;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    const std::size_t hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError("line " + std::to_string(line_no) + ": bad section header");
      section = trim(line.substr(1, line.size() - 2));
      if (section != "model" && section != "data" && section != "train" &&
          section != "federated" && section != "secure" && section != "synthetic" &&
          plant_index(cfg.synthetic, section) < 0) {
        throw ConfigError("unknown config section [" + section + "]");
      }
      continue;
    }
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const std::string qual = section.empty() ? key : section + "." + key;

    if (section.empty()) {
      if (key == "master_seed") {
        cfg.master_seed = to_u64(qual, value);
      } else {
        throw ConfigError("unknown top-level key: " + key);
      }
    } else if (section == "model") {
      if (key == "hidden_layers") {
        cfg.hidden_layers.clear();
        for (const auto& item : split_list(value)) {
          cfg.hidden_layers.push_back(static_cast<int>(to_int(qual, item)));
        }
      } else if (key == "activation") {
        cfg.activation = activation_from_string(value);
      } else {
        throw ConfigError("unknown key: " + qual);
      }
    } else if (section == "data") {
      if (key == "window_length") {
        cfg.data.window.window_length = static_cast<int>(to_int(qual, value));
      } else if (key == "horizon") {
        cfg.data.window.horizon = static_cast<int>(to_int(qual, value));
      } else if (key == "feature_columns") {
        cfg.data.window.feature_columns = split_list(value);
      } else if (key == "target_columns") {
        cfg.data.window.target_columns = split_list(value);
      } else if (key == "split_fraction") {
        cfg.data.split_fraction = to_double(qual, value);
      } else if (key == "outlier_k") {
        cfg.data.outlier_k = to_double(qual, value);
      } else {
        throw ConfigError("unknown key: " + qual);
      }
    } else if (section == "train") {
      if (key == "epochs") {
        cfg.epochs = static_cast<int>(to_int(qual, value));
      } else if (key == "batch_size") {
        cfg.batch_size = static_cast<int>(to_int(qual, value));
      } else if (key == "eta") {
        cfg.eta = to_double(qual, value);
      } else {
        throw ConfigError("unknown key: " + qual);
      }
    } else if (section == "federated") {
      if (key == "rounds") {
        cfg.rounds = static_cast<int>(to_int(qual, value));
      } else if (key == "weighting") {
        if (value == "fedavg") {
          cfg.weighting = WeightsMode::kFedAvg;
        } else if (value == "adaptive") {
          cfg.weighting = WeightsMode::kAdaptive;
        } else {
          throw ConfigError("weighting must be fedavg or adaptive");
        }
      } else if (key == "secure") {
        cfg.secure = to_bool(qual, value);
      } else if (key == "alpha_mean") {
        cfg.alpha_mean = to_double(qual, value);
      } else if (key == "alpha_overrides") {
        cfg.alpha_overrides.clear();
        for (const auto& item : split_list(value)) {
          cfg.alpha_overrides.push_back(to_double(qual, item));
        }
      } else if (key == "timeout_ms") {
        cfg.timeout_ms = static_cast<int>(to_int(qual, value));
      } else {
        throw ConfigError("unknown key: " + qual);
      }
    } else if (section == "secure") {
      if (key == "scale_bits") {
        cfg.quant.scale_bits = static_cast<int>(to_int(qual, value));
      } else if (key == "clip_range") {
        cfg.quant.clip_range = to_double(qual, value);
      } else if (key == "mask_seed") {
        cfg.mask_seed = to_u64(qual, value);
        cfg.mask_seed_set = true;
      } else {
        throw ConfigError("unknown key: " + qual);
      }
    } else if (section == "synthetic") {
      if (key == "noise_std") {
        cfg.synthetic.noise_std = to_double(qual, value);
      } else if (key == "missing_fraction") {
        cfg.synthetic.missing_fraction = to_double(qual, value);
      } else if (key == "samples") {
        const auto items = split_list(value);
        if (items.size() != cfg.synthetic.plants.size()) {
          throw ConfigError("synthetic.samples needs one count per plant");
        }
        for (std::size_t i = 0; i < items.size(); ++i) {
          cfg.synthetic.plants[i].samples = static_cast<int>(to_int(qual, items[i]));
        }
      } else {
        throw ConfigError("unknown key: " + qual);
      }
    } else {
      const int p = plant_index(cfg.synthetic, section);
      if (p < 0) throw ConfigError("unknown config section [" + section + "]");
      PlantRegime& regime = cfg.synthetic.plants[static_cast<std::size_t>(p)];
      if (key == "samples") {
        regime.samples = static_cast<int>(to_int(qual, value));
      } else if (key == "gain_sin") {
        regime.gain_sin = to_double(qual, value);
      } else if (key == "gain_quad") {
        regime.gain_quad = to_double(qual, value);
      } else if (key == "gain_cross") {
        regime.gain_cross = to_double(qual, value);
      } else if (key == "offset") {
        regime.offset = to_double(qual, value);
      } else if (key == "range_temperature") {
        const auto r = to_range(qual, value);
        regime.range_lo[0] = r[0];
        regime.range_hi[0] = r[1];
      } else if (key == "range_pressure") {
        const auto r = to_range(qual, value);
        regime.range_lo[1] = r[0];
        regime.range_hi[1] = r[1];
      } else if (key == "range_flow") {
        const auto r = to_range(qual, value);
        regime.range_lo[2] = r[0];
        regime.range_hi[2] = r[1];
      } else if (key == "range_concentration") {
        const auto r = to_range(qual, value);
        regime.range_lo[3] = r[0];
        regime.range_hi[3] = r[1];
      } else {
        throw ConfigError("unknown key: " + qual);
      }
    }
  }

  if (const char* env_seed = std::getenv("FEDPLANT_SEED")) {
    cfg.master_seed = to_u64("FEDPLANT_SEED", env_seed);
  }
  return cfg;
}

ExperimentConfig load_config_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_config(buf.str());
}

std::string render_config(const ExperimentConfig& cfg) {
  std::ostringstream out;
  out << "master_seed = " << cfg.master_seed << "\n\n";
  out << "[model]\nhidden_layers = ";
  for (std::size_t i = 0; i < cfg.hidden_layers.size(); ++i) {
    if (i) out << ",";
    out << cfg.hidden_layers[i];
  }
  out << "\nactivation = " << to_string(cfg.activation) << "\n\n";

  out << "[data]\n";
  out << "window_length = " << cfg.data.window.window_length << "\n";
  out << "horizon = " << cfg.data.window.horizon << "\n";
  out << "feature_columns = ";
  for (std::size_t i = 0; i < cfg.data.window.feature_columns.size(); ++i) {
    if (i) out << ",";
    out << cfg.data.window.feature_columns[i];
  }
  out << "\ntarget_columns = ";
  for (std::size_t i = 0; i < cfg.data.window.target_columns.size(); ++i) {
    if (i) out << ",";
    out << cfg.data.window.target_columns[i];
  }
  out << "\nsplit_fraction = " << cfg.data.split_fraction << "\n";
  out << "outlier_k = " << cfg.data.outlier_k << "\n\n";

  out << "[train]\n";
  out << "epochs = " << cfg.epochs << "\n";
  out << "batch_size = " << cfg.batch_size << "\n";
  out << "eta = " << cfg.eta << "\n\n";

  out << "[federated]\n";
  out << "rounds = " << cfg.rounds << "\n";
  out << "weighting = " << (cfg.weighting == WeightsMode::kFedAvg ? "fedavg" : "adaptive")
      << "\n";
  out << "secure = " << (cfg.secure ? "true" : "false") << "\n";
  out << "alpha_mean = " << cfg.alpha_mean << "\n";
  if (!cfg.alpha_overrides.empty()) {
    out << "alpha_overrides = ";
    for (std::size_t i = 0; i < cfg.alpha_overrides.size(); ++i) {
      if (i) out << ",";
      out << cfg.alpha_overrides[i];
    }
    out << "\n";
  }
  out << "timeout_ms = " << cfg.timeout_ms << "\n\n";

  out << "[secure]\n";
  out << "scale_bits = " << cfg.quant.scale_bits << "\n";
  out << "clip_range = " << cfg.quant.clip_range << "\n";
  if (cfg.mask_seed_set) out << "mask_seed = " << cfg.mask_seed << "\n";
  out << "\n[synthetic]\n";
  out << "noise_std = " << cfg.synthetic.noise_std << "\n";
  out << "missing_fraction = " << cfg.synthetic.missing_fraction << "\n";
  out << "samples = ";
  for (std::size_t i = 0; i < cfg.synthetic.plants.size(); ++i) {
    if (i) out << ",";
    out << cfg.synthetic.plants[i].samples;
  }
  out << "\n";
  for (const auto& p : cfg.synthetic.plants) {
    out << "\n[plant_" << p.name << "]\n";
    out << "gain_sin = " << p.gain_sin << "\n";
    out << "gain_quad = " << p.gain_quad << "\n";
    out << "gain_cross = " << p.gain_cross << "\n";
    out << "offset = " << p.offset << "\n";
    out << "range_temperature = " << p.range_lo[0] << "," << p.range_hi[0] << "\n";
    out << "range_pressure = " << p.range_lo[1] << "," << p.range_hi[1] << "\n";
    out << "range_flow = " << p.range_lo[2] << "," << p.range_hi[2] << "\n";
    out << "range_concentration = " << p.range_lo[3] << "," << p.range_hi[3] << "\n";
  }
  return out.str();
}

}  // namespace fedplant
