#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "fedplant/config.hpp"
#include "fedplant/coordinator.hpp"
#include "fedplant/errors.hpp"
#include "fedplant/report.hpp"

namespace fs = std::filesystem;
using namespace fedplant;

namespace {

std::string read_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open " + path.string());
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

void write_file(const fs::path& path, const std::string& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw DataError("cannot write " + path.string());
  out << bytes;
  if (!out) throw DataError("write failed: " + path.string());
}

ExperimentConfig load_config_or_defaults(const std::string& config_path) {
  if (config_path.empty()) {
    ExperimentConfig cfg = ExperimentConfig::defaults();
    if (const char* env_seed = std::getenv("FEDPLANT_SEED")) {
      cfg.master_seed = std::strtoull(env_seed, nullptr, 10);
    }
    return cfg;
  }
  return load_config_file(config_path);
}

struct LoadedData {
  std::vector<RawPlantTable> tables;
  std::string fingerprint;
};

LoadedData load_plant_data(const ExperimentConfig& cfg, const fs::path& data_dir) {
  LoadedData data;
  std::vector<std::string> all_bytes;
  for (const auto& spec : cfg.plant_specs()) {
    const fs::path path = data_dir / (spec.name + ".csv");
    std::string bytes = read_file(path);
    data.tables.push_back(parse_csv(bytes, spec.name));
    all_bytes.push_back(std::move(bytes));
  }
  data.fingerprint = data_fingerprint(all_bytes);
  return data;
}

RunMetrics base_metrics(const ExperimentConfig& cfg, const std::string& mode,
                        const std::string& fingerprint) {
  RunMetrics run;
  run.mode = mode;
  run.master_seed = cfg.master_seed;
  run.data_fingerprint = fingerprint;
  run.config_echo = render_config(cfg);
  return run;
}

int cmd_generate(const std::string& config_path, const std::string& out_dir,
                 bool seed_set, uint64_t seed) {
  ExperimentConfig cfg = load_config_or_defaults(config_path);
  if (seed_set) cfg.master_seed = seed;
  fs::create_directories(out_dir);
  const auto tables = generate_synthetic_plants(cfg.synthetic, cfg.master_seed);
  for (const auto& table : tables) {
    write_file(fs::path(out_dir) / (table.plant_id + ".csv"), render_csv(table));
  }
  std::cerr << "wrote " << tables.size() << " plant CSVs to " << out_dir << "\n";
  return 0;
}

int cmd_run(const std::string& mode, const std::string& config_path,
            const std::string& data_dir, const std::string& out_dir) {
  const ExperimentConfig cfg = load_config_or_defaults(config_path);
  const LoadedData data = load_plant_data(cfg, data_dir);
  const FederatedConfig fc = cfg.federated();
  fs::create_directories(out_dir);

  if (mode == "federated") {
    const FederatedResult result = run_federated(fc, data.tables, cfg.data);
    write_file(fs::path(out_dir) / "rounds.jsonl", rounds_to_jsonl(result.rounds));
    RunMetrics run = base_metrics(cfg, "federated", data.fingerprint);
    run.plants = result.final_metrics;
    write_file(fs::path(out_dir) / "metrics.json", metrics_to_json(run));
  } else if (mode == "centralized") {
    const CentralizedResult result = run_centralized(fc, data.tables, cfg.data);
    write_file(fs::path(out_dir) / "epochs.jsonl", epochs_to_jsonl(result.epoch_losses));
    RunMetrics run = base_metrics(cfg, "centralized", data.fingerprint);
    run.plants = result.metrics;
    write_file(fs::path(out_dir) / "metrics.json", metrics_to_json(run));
  } else if (mode == "local") {
    const auto result = run_local_only(fc, data.tables, cfg.data);
    RunMetrics run = base_metrics(cfg, "local", data.fingerprint);
    for (const auto& [name, r] : result) run.plants[name] = r.metrics;
    write_file(fs::path(out_dir) / "metrics.json", metrics_to_json(run));
  } else {
    throw ConfigError("mode must be federated, centralized, or local");
  }
  std::cerr << mode << " run complete; artifacts in " << out_dir << "\n";
  return 0;
}

int cmd_compare(const std::vector<std::string>& run_dirs, const std::string& out_path,
                const std::string& table_path) {
  if (run_dirs.size() != 3) {
    throw ConfigError("compare needs exactly three --runs directories");
  }
  ComparisonInputs inputs;
  bool have_fed = false, have_cen = false, have_loc = false;
  for (const auto& dir : run_dirs) {
    RunMetrics run = parse_metrics_json(read_file(fs::path(dir) / "metrics.json"));
    if (run.mode == "federated") {
      inputs.federated = std::move(run);
      inputs.federated_rounds_jsonl = read_file(fs::path(dir) / "rounds.jsonl");
      have_fed = true;
    } else if (run.mode == "centralized") {
      inputs.centralized = std::move(run);
      inputs.centralized_epochs_jsonl = read_file(fs::path(dir) / "epochs.jsonl");
      have_cen = true;
    } else if (run.mode == "local") {
      inputs.local = std::move(run);
      have_loc = true;
    } else {
      throw DataError("unknown run mode in " + dir + ": " + run.mode);
    }
  }
  if (!have_fed || !have_cen || !have_loc) {
    throw DataError("compare needs one federated, one centralized, and one local run");
  }
  write_file(out_path, build_report_json(inputs));
  write_file(table_path, build_table_csv(inputs));
  std::cerr << "wrote " << out_path << " and " << table_path << "\n";
  return 0;
}

int cmd_serve(const std::string& config_path, const std::string& listen,
              const std::string& data_dir, const std::string& out_dir) {
  const ExperimentConfig cfg = load_config_or_defaults(config_path);
  const LoadedData data = load_plant_data(cfg, data_dir);
  const FederatedConfig fc = cfg.federated();
  fs::create_directories(out_dir);

  std::vector<PreparedPlant> prepared;
  for (const auto& table : data.tables) prepared.push_back(prepare_plant(table, cfg.data));

  auto listener = make_listener(listen);
  std::cerr << "listening on " << listener->endpoint() << " for " << fc.plants.size()
            << " plants\n";
  const FederatedResult result = run_server(fc, prepared, *listener);

  write_file(fs::path(out_dir) / "rounds.jsonl", rounds_to_jsonl(result.rounds));
  RunMetrics run = base_metrics(cfg, "federated", data.fingerprint);
  run.plants = result.final_metrics;
  write_file(fs::path(out_dir) / "metrics.json", metrics_to_json(run));
  std::cerr << "federated run complete; artifacts in " << out_dir << "\n";
  return 0;
}

int cmd_client(const std::string& config_path, const std::string& plant,
               const std::string& data_file, const std::string& connect) {
  const ExperimentConfig cfg = load_config_or_defaults(config_path);
  const auto specs = cfg.plant_specs();
  const PlantSpec* found = nullptr;
  for (const auto& spec : specs) {
    if (spec.name == plant || spec.name == "plant_" + plant ||
        std::to_string(spec.id) == plant) {
      found = &spec;
      break;
    }
  }
  if (!found) throw ConfigError("unknown plant: " + plant);

  const RawPlantTable table = parse_csv(read_file(data_file), found->name);
  const FederatedConfig fc = cfg.federated();

  ClientContext ctx;
  ctx.plant_id = found->id;
  ctx.arch = fc.arch;
  ctx.base_cfg = fc.local_cfg;
  ctx.secure = fc.secure;
  ctx.mask_group_seed = fc.mask_group_seed;
  ctx.timeout_ms = fc.timeout_ms;
  ctx.train_set = prepare_plant(table, cfg.data).split.train;

  auto channel = dial(connect, fc.timeout_ms);
  run_client(ctx, *channel);
  std::cerr << found->name << " finished all rounds\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"fedplant: privacy-preserving federated regression over multi-site process data"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, mode, listen, connect, plant, data_file;
  std::string report_path = "report.json", table_path = "table.csv";
  std::vector<std::string> run_dirs;
  uint64_t seed = 0;

  auto* generate = app.add_subcommand("generate", "write synthetic plant CSVs");
  generate->add_option("--config", config_path, "config file");
  generate->add_option("--out", out_dir, "output directory")->required();
  auto* seed_opt = generate->add_option("--seed", seed, "override master seed");

  auto* run = app.add_subcommand("run", "run one training paradigm end to end");
  run->add_option("--mode", mode, "federated|centralized|local")->required();
  run->add_option("--config", config_path, "config file");
  run->add_option("--data", data_dir, "directory with plant CSVs")->required();
  run->add_option("--out", out_dir, "output directory")->required();

  auto* compare = app.add_subcommand("compare", "combine three runs into a report");
  compare->add_option("--runs", run_dirs, "three run directories")->required();
  compare->add_option("--out", report_path, "report JSON path");
  compare->add_option("--table", table_path, "comparison CSV path");

  auto* serve = app.add_subcommand("serve", "host the federated coordinator");
  serve->add_option("--config", config_path, "config file");
  serve->add_option("--listen", listen, "host:port or inproc:<name>")->required();
  serve->add_option("--data", data_dir, "directory with plant CSVs")->required();
  serve->add_option("--out", out_dir, "output directory")->required();

  auto* client = app.add_subcommand("client", "join a coordinator as one plant");
  client->add_option("--config", config_path, "config file");
  client->add_option("--plant", plant, "plant name (A, plant_A) or id")->required();
  client->add_option("--data", data_file, "this plant's CSV file")->required();
  client->add_option("--connect", connect, "coordinator host:port")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;  // usage problems are config errors
  }

  try {
    if (generate->parsed()) return cmd_generate(config_path, out_dir, seed_opt->count() > 0, seed);
    if (run->parsed()) return cmd_run(mode, config_path, data_dir, out_dir);
    if (compare->parsed()) return cmd_compare(run_dirs, report_path, table_path);
    if (serve->parsed()) return cmd_serve(config_path, listen, data_dir, out_dir);
    if (client->parsed()) return cmd_client(config_path, plant, data_file, connect);
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ProtocolError& e) {
    std::cerr << "protocol error: " << e.what() << "\n";
    return 4;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
