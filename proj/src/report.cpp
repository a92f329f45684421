#include "fedplant/report.hpp"

#include <cstdio>
#include <sstream>

#include <json.hpp>

#include "fedplant/errors.hpp"

namespace fedplant {

using ordered_json = nlohmann::ordered_json;

namespace {

ordered_json metrics_object(const EvalMetrics& m) {
  ordered_json j;
  j["mse"] = m.mse;
  j["mae"] = m.mae;
  j["r2"] = m.r2;
  return j;
}

ordered_json plants_object(const std::map<std::string, EvalMetrics>& plants) {
  ordered_json j = ordered_json::object();
  for (const auto& [name, m] : plants) j[name] = metrics_object(m);
  return j;
}

}  // namespace

std::string rounds_to_jsonl(const std::vector<RoundRecord>& records) {
  std::string out;
  for (const auto& r : records) {
    ordered_json j;
    j["round"] = r.round;
    j["global_train_mse"] = r.global_train_mse;
    j["per_plant_test_mse"] = ordered_json::object();
    for (const auto& [name, mse] : r.per_plant_test_mse) j["per_plant_test_mse"][name] = mse;
    j["weights"] = ordered_json::object();
    for (const auto& [name, w] : r.weights_used) j["weights"][name] = w;
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string epochs_to_jsonl(const std::vector<double>& epoch_losses) {
  std::string out;
  for (std::size_t e = 0; e < epoch_losses.size(); ++e) {
    ordered_json j;
    j["epoch"] = e + 1;
    j["train_loss"] = epoch_losses[e];
    out += j.dump();
    out += '\n';
  }
  return out;
}

std::string metrics_to_json(const RunMetrics& run) {
  ordered_json j;
  j["mode"] = run.mode;
  j["master_seed"] = run.master_seed;
  j["data_fingerprint"] = run.data_fingerprint;
  j["config"] = run.config_echo;
  j["plants"] = plants_object(run.plants);
  return j.dump(2) + "\n";
}

RunMetrics parse_metrics_json(const std::string& text) {
  ordered_json j;
  try {
    j = ordered_json::parse(text);
  } catch (const std::exception& e) {
    throw DataError(std::string("cannot parse metrics.json: ") + e.what());
  }
  RunMetrics run;
  try {
    run.mode = j.at("mode").get<std::string>();
    run.master_seed = j.at("master_seed").get<uint64_t>();
    run.data_fingerprint = j.at("data_fingerprint").get<std::string>();
    run.config_echo = j.at("config").get<std::string>();
    for (const auto& [name, m] : j.at("plants").items()) {
      EvalMetrics em;
      em.mse = m.at("mse").get<double>();
      em.mae = m.at("mae").get<double>();
      em.r2 = m.at("r2").get<double>();
      run.plants[name] = em;
    }
  } catch (const std::exception& e) {
    throw DataError(std::string("metrics.json missing fields: ") + e.what());
  }
  return run;
}

std::string data_fingerprint(const std::vector<std::string>& csv_bytes_in_plant_order) {
  uint64_t h = 0xcbf29ce484222325ULL;
  for (const auto& bytes : csv_bytes_in_plant_order) {
    for (unsigned char c : bytes) {
      h ^= c;
      h *= 0x100000001b3ULL;
    }
    h ^= 0x1f;  // file separator
    h *= 0x100000001b3ULL;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

namespace {

void check_consistent(const ComparisonInputs& in) {
  const RunMetrics* runs[] = {&in.federated, &in.centralized, &in.local};
  for (const RunMetrics* run : runs) {
    if (run->master_seed != in.federated.master_seed) {
      throw DataError("compare: runs use different master seeds");
    }
    if (run->data_fingerprint != in.federated.data_fingerprint) {
      throw DataError("compare: runs were produced from different data");
    }
    if (run->config_echo != in.federated.config_echo) {
      throw DataError("compare: runs used different configurations");
    }
    if (run->plants.size() != in.federated.plants.size()) {
      throw DataError("compare: runs cover different plant sets");
    }
  }
  for (const auto& [name, m] : in.federated.plants) {
    if (!in.centralized.plants.contains(name) || !in.local.plants.contains(name)) {
      throw DataError("compare: plant " + name + " missing from a run");
    }
  }
  if (in.federated.mode != "federated" || in.centralized.mode != "centralized" ||
      in.local.mode != "local") {
    throw DataError("compare: needs one run each of federated, centralized, local");
  }
}

}  // namespace

std::string build_report_json(const ComparisonInputs& inputs) {
  check_consistent(inputs);
  ordered_json j;
  j["config"] = inputs.federated.config_echo;
  j["master_seed"] = inputs.federated.master_seed;
  j["data_fingerprint"] = inputs.federated.data_fingerprint;
  j["metrics"] = ordered_json::object();
  j["metrics"]["centralized"] = plants_object(inputs.centralized.plants);
  j["metrics"]["federated"] = plants_object(inputs.federated.plants);
  j["metrics"]["local_only"] = plants_object(inputs.local.plants);

  j["federated_rounds"] = ordered_json::array();
  std::istringstream rounds(inputs.federated_rounds_jsonl);
  std::string line;
  while (std::getline(rounds, line)) {
    if (line.empty()) continue;
    j["federated_rounds"].push_back(ordered_json::parse(line));
  }
  j["centralized_epochs"] = ordered_json::array();
  std::istringstream epochs(inputs.centralized_epochs_jsonl);
  while (std::getline(epochs, line)) {
    if (line.empty()) continue;
    j["centralized_epochs"].push_back(ordered_json::parse(line));
  }

  j["improvement_percent"] = ordered_json::object();
  for (const auto& [name, fed] : inputs.federated.plants) {
    const double local_mse = inputs.local.plants.at(name).mse;
    j["improvement_percent"][name] = 100.0 * (1.0 - fed.mse / local_mse);
  }
  return j.dump(2) + "\n";
}

std::string build_table_csv(const ComparisonInputs& inputs) {
  check_consistent(inputs);
  std::string out = "plant,centralized_mse,federated_mse,local_only_mse\n";
  for (const auto& [name, fed] : inputs.federated.plants) {
    const ordered_json row[] = {ordered_json(inputs.centralized.plants.at(name).mse),
                                ordered_json(fed.mse),
                                ordered_json(inputs.local.plants.at(name).mse)};
    out += name;
    for (const auto& v : row) {
      out += ',';
      out += v.dump();
    }
    out += '\n';
  }
  return out;
}

}  // namespace fedplant
