#pragma once

#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "fedfusion/codec.hpp"
#include "fedfusion/data.hpp"
#include "fedfusion/train.hpp"

namespace fedfusion {

// Pseudo client id for the accuracy-weighted average candidate (--aggregate avg).
inline constexpr std::uint32_t kAggregateClientId = 0xFFFFFFFFu;

// max(1, ceil(fraction * n)); fraction must lie in (0, 1].
std::size_t selection_size(std::size_t n, double top_fraction);

// Highest accuracy first, ties to the lower client id.
std::vector<LocalUpdateMsg> select_top(std::vector<LocalUpdateMsg> updates, double top_fraction);

// Server-side accuracy of an artifact on the server's held-out set.
// Throws ManifestMismatch if the artifact does not fit the federation's model.
using Evaluator = std::function<double(const ModelArtifact&)>;

struct ServerState {
  ModelArtifact global;
  double global_accuracy = 0.0;
  std::uint32_t round = 0;  // completed rounds
  std::vector<LocalUpdateMsg> pending_updates;
  double top_fraction = 0.8;
  std::size_t min_clients_per_round = 1;
};

struct PromoteOutcome {
  bool promoted = false;
  std::optional<std::uint32_t> source_client;
  double best_accuracy = 0.0;  // best server-measured accuracy this round
  std::vector<std::uint32_t> rejected;  // manifest mismatches
};

// Re-measures every selected artifact; replaces the global model only on strict
// improvement. The round counter advances either way.
PromoteOutcome promote(ServerState& state, std::span<const LocalUpdateMsg> selected, const Evaluator& evaluate);

// Accuracy-weighted parameter average of same-layout artifacts.
ModelArtifact average_artifacts(std::span<const LocalUpdateMsg> updates);

struct RoundSummary {
  std::uint32_t round = 0;
  bool promoted = false;
  std::optional<std::uint32_t> promoted_client;
  double global_accuracy = 0.0;
  std::vector<std::uint32_t> participants;
  std::vector<std::uint32_t> selected;

  bool operator==(const RoundSummary&) const = default;
};

// Collect-then-decide round driver. Owned by one thread.
class RoundCoordinator {
 public:
  RoundCoordinator(ServerState initial, Evaluator evaluate, bool aggregate_average = false);

  // Starts round state().round + 1 and returns the broadcast message.
  GlobalModelMsg begin_round();
  // Updates for another round or from a client that already submitted are ignored (returns false).
  bool submit(LocalUpdateMsg update);
  std::size_t submitted() const { return state_.pending_updates.size(); }
  RoundSummary finish_round();

  const ServerState& state() const { return state_; }
  std::uint32_t current_round() const { return open_round_; }

 private:
  ServerState state_;
  Evaluator evaluate_;
  bool aggregate_;
  std::uint32_t open_round_ = 0;
};

// One simulated hospital: trains the received global model on its private shard.
class FedClient {
 public:
  FedClient(std::uint32_t id, LabeledDataset shard, ArchitectureOptions arch_options, TrainConfig train_config,
            std::uint64_t seed);

  std::uint32_t id() const { return id_; }
  const LabeledDataset& shard() const { return shard_; }
  LocalUpdateMsg handle(const GlobalModelMsg& msg);

 private:
  std::uint32_t id_;
  LabeledDataset shard_;
  ArchitectureOptions arch_options_;
  TrainConfig train_config_;
  std::uint64_t seed_;
};

enum class ShardMode { Iid, LabelSkew };
ShardMode parse_shard_mode(std::string_view name);

// Disjoint, exhaustive shards. iid: stratified round-robin. label_skew: client c
// receives 80% of class (c mod 3) split among such clients, the rest spread over the others.
std::vector<LabeledDataset> shard_dataset(const LabeledDataset& ds, std::size_t n_clients, ShardMode mode,
                                          std::uint64_t seed);

// Evaluator backed by a model built from opts and a validation set (which must outlive it).
Evaluator validation_evaluator(ArchitectureOptions opts, const LabeledDataset& validation);

// Every message of a round goes through encode/decode; tap sees each frame.
using WireTap = std::function<void(std::span<const std::uint8_t>)>;

RoundSummary run_round(RoundCoordinator& coordinator, std::vector<FedClient>& clients, const WireTap& tap = {});
std::vector<RoundSummary> run_simulation(RoundCoordinator& coordinator, std::vector<FedClient>& clients,
                                         std::size_t rounds, const WireTap& tap = {});

// round,promoted,promoted_client,global_accuracy (promoted_client empty when nothing was promoted)
std::string round_log_csv(const std::vector<RoundSummary>& log);

// Everything a federation run needs besides the data.
struct FederationConfig {
  ArchitectureId arch = ArchitectureId::TinyVGG;
  ArchitectureOptions arch_options;
  TrainConfig local_train;
  std::size_t clients = 5;
  std::size_t rounds = 3;
  double top_fraction = 0.8;
  std::size_t min_clients = 1;
  ShardMode shard_mode = ShardMode::Iid;
  bool aggregate_average = false;
  std::uint64_t seed = 1;

  void validate() const;
};

// Initial global model is built from arch_options (init_seed = seed) and measured on validation.
RoundCoordinator make_coordinator(const FederationConfig& cfg, const LabeledDataset& validation);
// Client `id` trains on shard `id` of the train pool.
FedClient make_client(const FederationConfig& cfg, const LabeledDataset& train_pool, std::uint32_t id);
std::vector<FedClient> make_clients(const FederationConfig& cfg, const LabeledDataset& train_pool);

}  // namespace fedfusion
