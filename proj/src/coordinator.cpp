#include "fedplant/coordinator.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <iostream>
#include <thread>

#include "fedplant/errors.hpp"
#include "fedplant/rng.hpp"

namespace fedplant {

void FederatedConfig::validate() const {
  if (rounds < 1) throw ConfigError("rounds must be >= 1");
  if (plants.empty()) throw ConfigError("at least one plant required");
  for (std::size_t i = 1; i < plants.size(); ++i) {
    if (plants[i].id <= plants[i - 1].id) {
      throw ConfigError("plant ids must be unique and ascending");
    }
  }
  if (!alpha_overrides.empty()) {
    if (alpha_overrides.size() != plants.size()) {
      throw ConfigError("alpha_overrides must list one value per plant");
    }
    for (double a : alpha_overrides) {
      if (!(a > 0.0)) throw ConfigError("alpha overrides must be > 0");
    }
  }
  if (!(alpha_mean > 0.0)) throw ConfigError("alpha_mean must be > 0");
  arch.validate();
  local_cfg.validate();
  quant.validate(plants.size());
}

std::vector<double> fedavg_weights(const std::vector<uint64_t>& sample_counts) {
  if (sample_counts.empty()) throw ContractViolation("fedavg_weights: empty plant list");
  uint64_t total = 0;
  for (uint64_t n : sample_counts) {
    if (n < 1) throw ContractViolation("fedavg_weights: sample counts must be >= 1");
    total += n;
  }
  std::vector<double> w;
  w.reserve(sample_counts.size());
  for (uint64_t n : sample_counts) {
    w.push_back(static_cast<double>(n) / static_cast<double>(total));
  }
  return w;
}

std::vector<double> adaptive_weights(const std::vector<uint64_t>& sample_counts,
                                     const std::vector<double>& alphas) {
  if (sample_counts.empty()) throw ContractViolation("adaptive_weights: empty plant list");
  if (sample_counts.size() != alphas.size()) {
    throw ContractViolation("adaptive_weights: alpha count mismatch");
  }
  double total = 0.0;
  for (std::size_t k = 0; k < sample_counts.size(); ++k) {
    if (sample_counts[k] < 1) throw ContractViolation("adaptive_weights: sample counts must be >= 1");
    if (!(alphas[k] > 0.0)) throw ContractViolation("adaptive_weights: alphas must be > 0");
    total += alphas[k] * static_cast<double>(sample_counts[k]);
  }
  std::vector<double> w;
  w.reserve(sample_counts.size());
  for (std::size_t k = 0; k < sample_counts.size(); ++k) {
    w.push_back(alphas[k] * static_cast<double>(sample_counts[k]) / total);
  }
  return w;
}

std::vector<double> compute_alpha(const std::vector<double>& local_mse,
                                  double alpha_mean) {
  if (local_mse.empty()) throw ContractViolation("compute_alpha: empty input");
  if (!(alpha_mean > 0.0)) throw ContractViolation("compute_alpha: alpha_mean must be > 0");
  std::vector<double> alpha;
  alpha.reserve(local_mse.size());
  double sum = 0.0;
  for (double mse : local_mse) {
    if (!(mse > 0.0)) throw ContractViolation("compute_alpha: mse must be > 0");
    const double a = std::log1p(1.0 / mse);
    alpha.push_back(a);
    sum += a;
  }
  const double rescale = alpha_mean * static_cast<double>(alpha.size()) / sum;
  for (double& a : alpha) a *= rescale;
  return alpha;
}

ParameterVector plaintext_aggregate(
    const std::vector<std::pair<uint32_t, ParameterVector>>& updates,
    const std::vector<double>& weights_by_position) {
  if (updates.empty()) throw ContractViolation("plaintext_aggregate: no updates");
  if (updates.size() != weights_by_position.size()) {
    throw ContractViolation("plaintext_aggregate: weight count mismatch");
  }
  // Pair weights with plant ids, then sum in ascending id order.
  std::vector<std::size_t> order(updates.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&updates](std::size_t a, std::size_t b) {
    return updates[a].first < updates[b].first;
  });
  const std::size_t q = updates.front().second.values.size();
  ParameterVector result;
  result.arch_id = updates.front().second.arch_id;
  result.values.assign(q, 0.0);
  for (std::size_t idx : order) {
    const auto& [id, params] = updates[idx];
    if (params.values.size() != q) {
      throw ContractViolation("plaintext_aggregate: parameter length mismatch");
    }
    const double w = weights_by_position[idx];
    for (std::size_t i = 0; i < q; ++i) result.values[i] += w * params.values[i];
  }
  if (!all_finite(result.values)) {
    throw DivergenceError("plaintext aggregate produced non-finite parameters");
  }
  return result;
}

namespace {

struct Session {
  uint32_t plant_id = 0;
  std::unique_ptr<Channel> channel;
};

struct PlainUpdate {
  uint32_t plant_id = 0;
  ParameterVector params;
};

// Weights for round `t` (1-based). Adaptive mode uses the previous round's
// reported training losses; round 1 has no history and falls back to
// uniform alphas. Configured overrides always win.
std::vector<double> round_weights(const FederatedConfig& cfg,
                                  const std::vector<uint64_t>& counts,
                                  const std::vector<double>& last_losses,
                                  uint32_t t) {
  if (cfg.weighting_mode == WeightsMode::kFedAvg) return fedavg_weights(counts);
  if (!cfg.alpha_overrides.empty()) return adaptive_weights(counts, cfg.alpha_overrides);
  if (t <= 1 || last_losses.empty()) {
    return adaptive_weights(counts, std::vector<double>(counts.size(), cfg.alpha_mean));
  }
  return adaptive_weights(counts, compute_alpha(last_losses, cfg.alpha_mean));
}

}  // namespace

FederatedResult run_server(const FederatedConfig& config,
                           const std::vector<PreparedPlant>& prepared,
                           Listener& listener) {
  config.validate();
  if (prepared.size() != config.plants.size()) {
    throw ContractViolation("run_server: prepared plant count mismatch");
  }
  const std::size_t n_plants = config.plants.size();
  const uint64_t arch_hash = config.arch.hash();
  const std::size_t q = config.arch.parameter_count();

  std::vector<uint32_t> expected_ids;
  std::vector<uint64_t> counts;
  for (std::size_t k = 0; k < n_plants; ++k) {
    expected_ids.push_back(config.plants[k].id);
    counts.push_back(prepared[k].split.train.n_samples());
  }

  // Handshake: keep accepting until every configured plant has joined.
  // Invalid joins are rejected with a ProtocolError message and dropped.
  std::vector<Session> sessions(n_plants);
  std::size_t joined = 0;
  while (joined < n_plants) {
    auto channel = listener.accept(config.timeout_ms);
    Message msg = recv_message(*channel, config.timeout_ms);
    const auto* join = std::get_if<JoinRequest>(&msg);
    if (!join) {
      send_message(*channel, ProtocolErrorMsg{4, "expected JoinRequest"});
      continue;
    }
    const auto it = std::find(expected_ids.begin(), expected_ids.end(), join->plant_id);
    if (it == expected_ids.end()) {
      send_message(*channel,
                   ProtocolErrorMsg{4, "unknown plant id " + std::to_string(join->plant_id)});
      continue;
    }
    const std::size_t slot = static_cast<std::size_t>(it - expected_ids.begin());
    if (sessions[slot].channel) {
      send_message(*channel, ProtocolErrorMsg{4, "plant already joined"});
      continue;
    }
    if (join->arch_hash != arch_hash) {
      send_message(*channel, ProtocolErrorMsg{4, "architecture mismatch"});
      continue;
    }
    JoinAccept accept;
    accept.round_count = static_cast<uint32_t>(config.rounds);
    accept.param_count = static_cast<uint32_t>(q);
    accept.scale_bits = static_cast<uint32_t>(config.quant.scale_bits);
    accept.clip_range = config.quant.clip_range;
    accept.weights_mode = config.weighting_mode;
    for (uint32_t id : expected_ids) {
      if (id != join->plant_id) accept.peer_ids.push_back(id);
    }
    send_message(*channel, accept);
    sessions[slot] = Session{join->plant_id, std::move(channel)};
    ++joined;
  }

  FederatedResult result;
  ParameterVector params = init_params(config.arch, config.master_seed);
  std::vector<double> last_losses;

  for (uint32_t t = 1; t <= static_cast<uint32_t>(config.rounds); ++t) {
    const auto started = std::chrono::steady_clock::now();
    const std::vector<double> weights = round_weights(config, counts, last_losses, t);

    const std::vector<uint8_t> params_bytes = serialize_params(params);
    for (std::size_t k = 0; k < n_plants; ++k) {
      send_message(*sessions[k].channel, GlobalModel{t, weights[k], params_bytes});
    }

    std::vector<PlainUpdate> plain_updates;
    std::vector<MaskedUpdate> masked_updates;
    std::vector<double> losses(n_plants, 0.0);
    for (std::size_t k = 0; k < n_plants; ++k) {
      Message msg = recv_message(*sessions[k].channel, config.timeout_ms);
      if (const auto* err = std::get_if<ProtocolErrorMsg>(&msg)) {
        const std::string text = "plant " + std::to_string(sessions[k].plant_id) +
                                 " failed in round " + std::to_string(t) + ": " + err->text;
        if (err->code == 5) throw DivergenceError(text);
        throw ProtocolError(text);
      }
      if (config.secure) {
        auto* upd = std::get_if<LocalUpdateMasked>(&msg);
        if (!upd) throw ProtocolError("expected masked update from plant " +
                                      std::to_string(sessions[k].plant_id));
        if (upd->round != t) throw ProtocolError("update for wrong round");
        if (upd->update.plant_id != sessions[k].plant_id) {
          throw ProtocolError("masked update carries wrong plant id");
        }
        if (upd->n_samples != counts[k]) {
          throw ProtocolError("plant " + std::to_string(sessions[k].plant_id) +
                              " reported n_samples inconsistent with its dataset");
        }
        losses[k] = upd->train_loss;
        masked_updates.push_back(std::move(upd->update));
      } else {
        auto* upd = std::get_if<LocalUpdatePlain>(&msg);
        if (!upd) throw ProtocolError("expected plain update from plant " +
                                      std::to_string(sessions[k].plant_id));
        if (upd->round != t) throw ProtocolError("update for wrong round");
        if (upd->plant_id != sessions[k].plant_id) {
          throw ProtocolError("plain update carries wrong plant id");
        }
        if (upd->n_samples != counts[k]) {
          throw ProtocolError("plant " + std::to_string(sessions[k].plant_id) +
                              " reported n_samples inconsistent with its dataset");
        }
        losses[k] = upd->train_loss;
        plain_updates.push_back(
            PlainUpdate{upd->plant_id, deserialize_params(upd->params, config.arch)});
      }
    }

    for (std::size_t k = 0; k < n_plants; ++k) {
      send_message(*sessions[k].channel, RoundAck{t});
    }

    if (config.secure) {
      params = aggregate_masked(masked_updates, expected_ids, config.arch, config.quant);
    } else {
      std::vector<std::pair<uint32_t, ParameterVector>> pairs;
      pairs.reserve(plain_updates.size());
      for (auto& u : plain_updates) pairs.emplace_back(u.plant_id, std::move(u.params));
      params = plaintext_aggregate(pairs, weights);
    }

    RoundRecord record;
    record.round = t;
    const std::vector<double> eval_weights = fedavg_weights(counts);
    double global_train = 0.0;
    for (std::size_t k = 0; k < n_plants; ++k) {
      const EvalMetrics train_m =
          evaluate(params, config.arch, prepared[k].split.train, prepared[k].stats);
      const EvalMetrics test_m =
          evaluate(params, config.arch, prepared[k].split.test, prepared[k].stats);
      global_train += eval_weights[k] * train_m.mse;
      record.per_plant_test_mse[config.plants[k].name] = test_m.mse;
      record.weights_used[config.plants[k].name] = weights[k];
    }
    record.global_train_mse = global_train;
    record.wall_time_ms = std::chrono::duration<double, std::milli>(
                              std::chrono::steady_clock::now() - started)
                              .count();
    result.rounds.push_back(std::move(record));
    last_losses = losses;
  }

  for (std::size_t k = 0; k < n_plants; ++k) {
    send_message(*sessions[k].channel, Shutdown{});
  }
  for (std::size_t k = 0; k < n_plants; ++k) {
    result.final_metrics[config.plants[k].name] =
        evaluate(params, config.arch, prepared[k].split.test, prepared[k].stats);
  }
  result.final_params = std::move(params);
  return result;
}

void run_client(const ClientContext& ctx, Channel& channel) {
  send_message(channel, JoinRequest{ctx.plant_id, ctx.arch.hash()});
  Message msg = recv_message(channel, ctx.timeout_ms);
  if (const auto* err = std::get_if<ProtocolErrorMsg>(&msg)) {
    throw ProtocolError("join rejected: " + err->text);
  }
  const auto* accept = std::get_if<JoinAccept>(&msg);
  if (!accept) throw ProtocolError("expected JoinAccept");
  if (accept->param_count != ctx.arch.parameter_count()) {
    throw ProtocolError("server parameter count disagrees with local architecture");
  }
  QuantizationSpec quant;
  quant.scale_bits = static_cast<int>(accept->scale_bits);
  quant.clip_range = accept->clip_range;

  std::vector<uint32_t> group = accept->peer_ids;
  group.push_back(ctx.plant_id);
  const MaskSeedMatrix seeds = MaskSeedMatrix::derive(ctx.mask_group_seed, group);

  std::size_t clip_events = 0;
  uint32_t last_acked = 0;
  while (true) {
    Message incoming = recv_message(channel, ctx.timeout_ms);
    if (std::holds_alternative<Shutdown>(incoming)) break;
    if (const auto* err = std::get_if<ProtocolErrorMsg>(&incoming)) {
      throw ProtocolError("server error: " + err->text);
    }
    const auto* global = std::get_if<GlobalModel>(&incoming);
    if (!global) throw ProtocolError("unexpected message during round phase");
    if (global->round <= last_acked) {
      send_message(channel, ProtocolErrorMsg{4, "round regression"});
      throw ProtocolError("server regressed to round " + std::to_string(global->round) +
                          " after ack of " + std::to_string(last_acked));
    }

    const ParameterVector received = deserialize_params(global->params, ctx.arch);
    LocalTrainConfig cfg = ctx.base_cfg;
    cfg.shuffle_seed = ctx.base_cfg.shuffle_seed +
                       static_cast<uint64_t>(global->round - 1) *
                           static_cast<uint64_t>(cfg.epochs);
    LocalUpdate update;
    try {
      update = train_local(received, ctx.arch, ctx.train_set, cfg, ctx.plant_id);
    } catch (const DivergenceError& e) {
      send_message(channel, ProtocolErrorMsg{5, e.what()});
      throw;
    }

    if (ctx.secure) {
      LocalUpdateMasked out;
      out.round = global->round;
      out.n_samples = update.n_samples;
      out.train_loss = update.train_loss_final;
      out.update = mask_update(update.params, global->weight, ctx.plant_id,
                               accept->peer_ids, seeds, global->round, quant,
                               &clip_events);
      send_message(channel, out);
    } else {
      LocalUpdatePlain out;
      out.round = global->round;
      out.plant_id = ctx.plant_id;
      out.n_samples = update.n_samples;
      out.train_loss = update.train_loss_final;
      out.params = serialize_params(update.params);
      send_message(channel, out);
    }

    Message ack = recv_message(channel, ctx.timeout_ms);
    const auto* round_ack = std::get_if<RoundAck>(&ack);
    if (!round_ack || round_ack->round != global->round) {
      throw ProtocolError("missing round ack");
    }
    last_acked = global->round;
  }
  if (clip_events > 0) {
    std::cerr << "plant " << ctx.plant_id << ": " << clip_events
              << " parameter(s) hit the quantization clip range\n";
  }
}

namespace {

std::atomic<uint64_t> g_inproc_counter{0};

struct ParadigmData {
  std::vector<PreparedPlant> prepared;  // aligned with config.plants
};

ParadigmData prepare_all(const FederatedConfig& config,
                         const std::vector<RawPlantTable>& tables,
                         const DataConfig& data_cfg) {
  if (tables.size() != config.plants.size()) {
    throw ContractViolation("plant table count does not match config");
  }
  ParadigmData data;
  data.prepared.reserve(tables.size());
  for (const auto& table : tables) data.prepared.push_back(prepare_plant(table, data_cfg));
  return data;
}

}  // namespace

FederatedResult run_federated(const FederatedConfig& config,
                              const std::vector<RawPlantTable>& tables,
                              const DataConfig& data_cfg) {
  config.validate();
  const ParadigmData data = prepare_all(config, tables, data_cfg);

  const std::string endpoint =
      "inproc:fed-" + std::to_string(g_inproc_counter.fetch_add(1));
  auto listener = make_listener(endpoint);

  std::vector<std::thread> workers;
  std::vector<std::exception_ptr> client_errors(config.plants.size());
  for (std::size_t k = 0; k < config.plants.size(); ++k) {
    workers.emplace_back([&, k] {
      try {
        ClientContext ctx;
        ctx.plant_id = config.plants[k].id;
        ctx.arch = config.arch;
        ctx.base_cfg = config.local_cfg;
        ctx.secure = config.secure;
        ctx.mask_group_seed = config.mask_group_seed;
        ctx.timeout_ms = config.timeout_ms;
        // Clients work from their own locally prepared split.
        ctx.train_set = prepare_plant(tables[k], data_cfg).split.train;
        auto channel = dial(endpoint, config.timeout_ms);
        run_client(ctx, *channel);
      } catch (...) {
        client_errors[k] = std::current_exception();
      }
    });
  }

  FederatedResult result;
  std::exception_ptr server_error;
  try {
    result = run_server(config, data.prepared, *listener);
  } catch (...) {
    server_error = std::current_exception();
  }
  listener->close();
  for (auto& w : workers) w.join();
  if (server_error) std::rethrow_exception(server_error);
  for (const auto& err : client_errors) {
    if (err) std::rethrow_exception(err);
  }
  return result;
}

CentralizedResult run_centralized(const FederatedConfig& config,
                                  const std::vector<RawPlantTable>& tables,
                                  const DataConfig& data_cfg) {
  config.validate();
  const ParadigmData data = prepare_all(config, tables, data_cfg);

  std::size_t total = 0;
  for (const auto& p : data.prepared) total += p.split.train.n_samples();
  PlantDataset combined;
  combined.plant_id = "centralized";
  const std::size_t in_cols = data.prepared.front().split.train.inputs.cols();
  const std::size_t out_cols = data.prepared.front().split.train.targets.cols();
  combined.inputs = Matrix(total, in_cols);
  combined.targets = Matrix(total, out_cols);
  std::size_t row = 0;
  for (const auto& p : data.prepared) {
    const auto& train = p.split.train;
    for (std::size_t i = 0; i < train.n_samples(); ++i, ++row) {
      for (std::size_t j = 0; j < in_cols; ++j) combined.inputs.at(row, j) = train.inputs.at(i, j);
      for (std::size_t j = 0; j < out_cols; ++j) combined.targets.at(row, j) = train.targets.at(i, j);
    }
  }

  CentralizedResult result;
  result.params = init_params(config.arch, config.master_seed);
  const int total_epochs = config.rounds * config.local_cfg.epochs;
  result.epoch_losses = run_epochs(result.params, config.arch, combined, total_epochs,
                                   config.local_cfg.batch_size, config.local_cfg.eta,
                                   config.local_cfg.shuffle_seed, 0, "centralized");
  for (std::size_t k = 0; k < config.plants.size(); ++k) {
    result.metrics[config.plants[k].name] = evaluate(
        result.params, config.arch, data.prepared[k].split.test, data.prepared[k].stats);
  }
  return result;
}

std::map<std::string, LocalOnlyPlantResult> run_local_only(
    const FederatedConfig& config, const std::vector<RawPlantTable>& tables,
    const DataConfig& data_cfg) {
  config.validate();
  const ParadigmData data = prepare_all(config, tables, data_cfg);
  std::map<std::string, LocalOnlyPlantResult> results;
  const int total_epochs = config.rounds * config.local_cfg.epochs;
  for (std::size_t k = 0; k < config.plants.size(); ++k) {
    LocalOnlyPlantResult r;
    r.params = init_params(config.arch, config.master_seed);
    run_epochs(r.params, config.arch, data.prepared[k].split.train, total_epochs,
               config.local_cfg.batch_size, config.local_cfg.eta,
               config.local_cfg.shuffle_seed, 0, config.plants[k].name);
    r.metrics = evaluate(r.params, config.arch, data.prepared[k].split.test,
                         data.prepared[k].stats);
    results[config.plants[k].name] = std::move(r);
  }
  return results;
}

}  // namespace fedplant
