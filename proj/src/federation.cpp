#include "fedfusion/federation.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <stdexcept>

#include <spdlog/spdlog.h>

namespace fedfusion {

std::size_t selection_size(std::size_t n, double top_fraction) {
  if (!(top_fraction > 0.0 && top_fraction <= 1.0)) throw std::invalid_argument("top fraction must be in (0, 1]");
  // The epsilon keeps exact products such as 0.8 * 5 from rounding up to 5.
  const auto k = static_cast<std::size_t>(std::ceil(top_fraction * static_cast<double>(n) - 1e-9));
  return std::clamp<std::size_t>(k, 1, std::max<std::size_t>(n, 1));
}

std::vector<LocalUpdateMsg> select_top(std::vector<LocalUpdateMsg> updates, double top_fraction) {
  if (updates.empty()) throw std::invalid_argument("select_top needs at least one update");
  const std::size_t k = selection_size(updates.size(), top_fraction);
  std::stable_sort(updates.begin(), updates.end(), [](const LocalUpdateMsg& a, const LocalUpdateMsg& b) {
    if (a.accuracy != b.accuracy) return a.accuracy > b.accuracy;
    return a.client_id < b.client_id;
  });
  updates.resize(k);
  return updates;
}

PromoteOutcome promote(ServerState& state, std::span<const LocalUpdateMsg> selected, const Evaluator& evaluate) {
  if (selected.empty()) throw std::invalid_argument("promote needs at least one selected update");
  PromoteOutcome out;
  const LocalUpdateMsg* best = nullptr;
  for (const LocalUpdateMsg& u : selected) {
    double acc = 0.0;
    try {
      acc = evaluate(u.artifact);
    } catch (const ManifestMismatch& e) {
      spdlog::warn("round {}: rejecting update from client {}: {}", state.round + 1, u.client_id, e.what());
      out.rejected.push_back(u.client_id);
      continue;
    }
    if (!best || acc > out.best_accuracy) {
      best = &u;
      out.best_accuracy = acc;
    }
  }
  if (best && out.best_accuracy > state.global_accuracy) {
    state.global = best->artifact;
    state.global.reported_accuracy.reset();
    state.global_accuracy = out.best_accuracy;
    out.promoted = true;
    out.source_client = best->client_id;
  }
  ++state.round;
  return out;
}

ModelArtifact average_artifacts(std::span<const LocalUpdateMsg> updates) {
  if (updates.empty()) throw std::invalid_argument("nothing to average");
  const ModelArtifact& first = updates.front().artifact;
  double total = 0.0;
  for (const auto& u : updates) {
    if (u.artifact.arch != first.arch || u.artifact.layout != first.layout) {
      throw ManifestMismatch("cannot average artifacts with different layouts");
    }
    total += u.accuracy;
  }
  std::vector<double> acc(first.params.size(), 0.0);
  for (const auto& u : updates) {
    const double w = total > 0.0 ? u.accuracy / total : 1.0 / static_cast<double>(updates.size());
    for (std::size_t i = 0; i < acc.size(); ++i) acc[i] += w * static_cast<double>(u.artifact.params[i]);
  }
  ModelArtifact out;
  out.arch = first.arch;
  out.layout = first.layout;
  out.params.assign(acc.begin(), acc.end());
  return out;
}

// -------------------------------------------------------------- coordinator

RoundCoordinator::RoundCoordinator(ServerState initial, Evaluator evaluate, bool aggregate_average)
    : state_(std::move(initial)), evaluate_(std::move(evaluate)), aggregate_(aggregate_average) {
  selection_size(1, state_.top_fraction);
}

GlobalModelMsg RoundCoordinator::begin_round() {
  open_round_ = state_.round + 1;
  state_.pending_updates.clear();
  return {open_round_, state_.global};
}

bool RoundCoordinator::submit(LocalUpdateMsg update) {
  if (open_round_ == 0 || update.round != open_round_) {
    spdlog::warn("ignoring update from client {} for round {} (open round {})", update.client_id, update.round,
                 open_round_);
    return false;
  }
  for (const auto& p : state_.pending_updates) {
    if (p.client_id == update.client_id) {
      spdlog::warn("ignoring duplicate update from client {}", update.client_id);
      return false;
    }
  }
  state_.pending_updates.push_back(std::move(update));
  return true;
}

RoundSummary RoundCoordinator::finish_round() {
  if (open_round_ == 0) throw std::logic_error("finish_round without begin_round");
  RoundSummary summary;
  summary.round = open_round_;

  // Client-reported accuracy is replaced by the server's own measurement.
  std::vector<LocalUpdateMsg> measured;
  for (auto& u : state_.pending_updates) {
    summary.participants.push_back(u.client_id);
    try {
      const double acc = evaluate_(u.artifact);
      spdlog::debug("round {}: client {} reported {:.4f}, measured {:.4f}", open_round_, u.client_id, u.accuracy, acc);
      u.accuracy = acc;
      measured.push_back(std::move(u));
    } catch (const ManifestMismatch& e) {
      spdlog::warn("round {}: rejecting update from client {}: {}", open_round_, u.client_id, e.what());
    }
  }
  std::sort(summary.participants.begin(), summary.participants.end());
  state_.pending_updates.clear();

  if (measured.empty()) {
    ++state_.round;
  } else {
    std::vector<LocalUpdateMsg> candidates = select_top(std::move(measured), state_.top_fraction);
    for (const auto& c : candidates) summary.selected.push_back(c.client_id);
    if (aggregate_ && candidates.size() >= 2) {
      try {
        LocalUpdateMsg avg;
        avg.client_id = kAggregateClientId;
        avg.round = open_round_;
        avg.artifact = average_artifacts(candidates);
        candidates.push_back(std::move(avg));
      } catch (const ManifestMismatch& e) {
        spdlog::warn("round {}: skipping average candidate: {}", open_round_, e.what());
      }
    }
    const PromoteOutcome outcome = promote(state_, candidates, evaluate_);
    summary.promoted = outcome.promoted;
    summary.promoted_client = outcome.source_client;
  }
  summary.global_accuracy = state_.global_accuracy;
  open_round_ = 0;
  spdlog::info("round {}: {} updates, promoted={} client={} global_accuracy={:.4f}", summary.round,
               summary.participants.size(), summary.promoted,
               summary.promoted_client ? std::to_string(*summary.promoted_client) : "-", summary.global_accuracy);
  return summary;
}

// ------------------------------------------------------------------- client

FedClient::FedClient(std::uint32_t id, LabeledDataset shard, ArchitectureOptions arch_options,
                     TrainConfig train_config, std::uint64_t seed)
    : id_(id),
      shard_(std::move(shard)),
      arch_options_(arch_options),
      train_config_(train_config),
      seed_(seed) {}

LocalUpdateMsg FedClient::handle(const GlobalModelMsg& msg) {
  LocalUpdateMsg out;
  out.client_id = id_;
  out.round = msg.round;
  if (shard_.size() < 2) {
    // Nothing to learn from; hand back the global model untouched.
    out.artifact = msg.artifact;
    if (!shard_.empty()) {
      Model m = model_from_artifact(msg.artifact, arch_options_);
      out.accuracy = evaluate(m, shard_).accuracy;
    }
    return out;
  }
  Model model = model_from_artifact(msg.artifact, arch_options_);
  TrainConfig cfg = train_config_;
  cfg.rng_seed = mix_seed(mix_seed(seed_, id_), msg.round);
  train(model, shard_, nullptr, cfg);
  out.artifact = export_artifact(model);
  out.accuracy = evaluate(model, shard_).accuracy;
  return out;
}

// ------------------------------------------------------------------ sharding

ShardMode parse_shard_mode(std::string_view name) {
  if (name == "iid") return ShardMode::Iid;
  if (name == "label_skew" || name == "label-skew") return ShardMode::LabelSkew;
  throw std::invalid_argument("unknown shard mode '" + std::string(name) + "'; expected iid or label_skew");
}

std::vector<LabeledDataset> shard_dataset(const LabeledDataset& ds, std::size_t n_clients, ShardMode mode,
                                          std::uint64_t seed) {
  if (n_clients == 0) throw std::invalid_argument("need at least one client");
  std::vector<std::vector<std::size_t>> by_class(kNumClasses);
  for (std::size_t i = 0; i < ds.size(); ++i) by_class.at(ds.samples[i].label).push_back(i);
  Rng rng(mix_seed(seed, 0x5A4D));
  for (auto& idx : by_class) rng.shuffle(idx);

  std::vector<LabeledDataset> shards(n_clients);
  if (mode == ShardMode::Iid) {
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      if (!by_class[c].empty() && by_class[c].size() < n_clients) {
        throw std::invalid_argument("iid sharding: " + std::to_string(n_clients) + " clients but class " +
                                    std::to_string(c) + " has only " + std::to_string(by_class[c].size()) + " samples");
      }
    }
    // A counter shared across classes keeps shard sizes within one of each other.
    std::size_t next = 0;
    for (const auto& idx : by_class) {
      for (std::size_t i : idx) shards[next++ % n_clients].samples.push_back(ds.samples[i]);
    }
  } else {
    if (n_clients < kNumClasses) {
      throw std::invalid_argument("label_skew sharding needs at least " + std::to_string(kNumClasses) + " clients");
    }
    for (std::size_t c = 0; c < kNumClasses; ++c) {
      std::vector<std::size_t> dominant, others;
      for (std::size_t k = 0; k < n_clients; ++k) (k % kNumClasses == c ? dominant : others).push_back(k);
      const auto& idx = by_class[c];
      const auto n_dom = static_cast<std::size_t>(std::floor(0.8 * static_cast<double>(idx.size()) + 1e-9));
      for (std::size_t i = 0; i < idx.size(); ++i) {
        const std::size_t client = i < n_dom ? dominant[i % dominant.size()] : others[(i - n_dom) % others.size()];
        shards[client].samples.push_back(ds.samples[idx[i]]);
      }
    }
  }
  return shards;
}

Evaluator validation_evaluator(ArchitectureOptions opts, const LabeledDataset& validation) {
  auto model = std::make_shared<std::optional<Model>>();
  return [opts, model, &validation](const ModelArtifact& a) {
    if (!*model || (*model)->arch() != a.arch) model->emplace(build_model(a.arch, opts));
    import_artifact(a, **model);
    return evaluate(**model, validation).accuracy;
  };
}

// --------------------------------------------------------------- simulation

namespace {

template <typename T>
T through_wire(const FedMessage& msg, const WireTap& tap) {
  const std::vector<std::uint8_t> frame = encode(msg);
  if (tap) tap(frame);
  return std::get<T>(decode(frame));
}

}  // namespace

RoundSummary run_round(RoundCoordinator& coordinator, std::vector<FedClient>& clients, const WireTap& tap) {
  if (clients.size() < coordinator.state().min_clients_per_round) {
    throw std::runtime_error("round aborted: " + std::to_string(clients.size()) + " clients, quorum is " +
                             std::to_string(coordinator.state().min_clients_per_round));
  }
  const FedMessage broadcast = coordinator.begin_round();
  for (FedClient& c : clients) {
    const auto gm = through_wire<GlobalModelMsg>(broadcast, tap);
    coordinator.submit(through_wire<LocalUpdateMsg>(c.handle(gm), tap));
  }
  RoundSummary summary = coordinator.finish_round();
  const FedMessage result = RoundResultMsg{summary.round, summary.promoted, summary.global_accuracy};
  for (std::size_t i = 0; i < clients.size(); ++i) through_wire<RoundResultMsg>(result, tap);
  return summary;
}

std::vector<RoundSummary> run_simulation(RoundCoordinator& coordinator, std::vector<FedClient>& clients,
                                         std::size_t rounds, const WireTap& tap) {
  std::vector<RoundSummary> log;
  for (std::size_t r = 0; r < rounds; ++r) log.push_back(run_round(coordinator, clients, tap));
  for (std::size_t i = 0; i < clients.size(); ++i) through_wire<ShutdownMsg>(ShutdownMsg{}, tap);
  return log;
}

std::string round_log_csv(const std::vector<RoundSummary>& log) {
  std::string out = "round,promoted,promoted_client,global_accuracy\n";
  for (const auto& r : log) {
    char acc[64];
    std::snprintf(acc, sizeof(acc), "%.17g", r.global_accuracy);
    out += std::to_string(r.round) + "," + (r.promoted ? "1" : "0") + "," +
           (r.promoted_client ? std::to_string(*r.promoted_client) : "") + "," + acc + "\n";
  }
  return out;
}

// ------------------------------------------------------------------- setup

void FederationConfig::validate() const {
  if (clients == 0) throw std::invalid_argument("clients must be positive");
  if (rounds == 0) throw std::invalid_argument("rounds must be positive");
  if (min_clients > clients) throw std::invalid_argument("min clients exceeds client count");
  selection_size(1, top_fraction);
  local_train.validate();
}

RoundCoordinator make_coordinator(const FederationConfig& cfg, const LabeledDataset& validation) {
  cfg.validate();
  if (validation.empty()) throw std::invalid_argument("server validation set is empty");
  ArchitectureOptions opts = cfg.arch_options;
  opts.init_seed = cfg.seed;
  Model initial = build_model(cfg.arch, opts);
  Evaluator eval = validation_evaluator(cfg.arch_options, validation);
  ServerState state;
  state.global = export_artifact(initial);
  state.global_accuracy = eval(state.global);
  state.top_fraction = cfg.top_fraction;
  state.min_clients_per_round = cfg.min_clients;
  spdlog::info("initial global model ({}) accuracy {:.4f}", architecture_cli_name(cfg.arch), state.global_accuracy);
  return RoundCoordinator(std::move(state), std::move(eval), cfg.aggregate_average);
}

FedClient make_client(const FederationConfig& cfg, const LabeledDataset& train_pool, std::uint32_t id) {
  if (id >= cfg.clients) throw std::invalid_argument("client id " + std::to_string(id) + " out of range");
  auto shards = shard_dataset(train_pool, cfg.clients, cfg.shard_mode, cfg.seed);
  return FedClient(id, std::move(shards[id]), cfg.arch_options, cfg.local_train, cfg.seed);
}

std::vector<FedClient> make_clients(const FederationConfig& cfg, const LabeledDataset& train_pool) {
  cfg.validate();
  auto shards = shard_dataset(train_pool, cfg.clients, cfg.shard_mode, cfg.seed);
  std::vector<FedClient> out;
  for (std::uint32_t id = 0; id < cfg.clients; ++id) {
    out.emplace_back(id, std::move(shards[id]), cfg.arch_options, cfg.local_train, cfg.seed);
  }
  return out;
}

}  // namespace fedfusion
