#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "fedda/advtrain.hpp"
#include "fedda/evalmetrics.hpp"
#include "fedda/segnet.hpp"
#include "fedda/synthdata.hpp"

// Synchronous federated rounds: broadcast -> (feature delivery) -> local
// training -> upload -> aggregate -> evaluate. Messages cross an in-memory
// transport as serialized bytes, which is what the byte counters measure.

namespace fedda::fed {

enum class Algorithm { FedAvg, Krum, FedProx, FedDaCyclic, FedDaJoint };
enum class Aggregator { FedAvg, Krum };

const char* algorithm_name(Algorithm a);
std::optional<Algorithm> parse_algorithm(const std::string& name);
const char* aggregator_name(Aggregator a);
std::optional<Aggregator> parse_aggregator(const std::string& name);
train::Mode training_mode(Algorithm a);
Aggregator default_aggregator(Algorithm a);

/// Target of a source client on the cyclic ring: (source mod n) + 1. Clients are 1-based.
int cyclic_target(int source_id, int n_clients);
/// Inverse of cyclic_target: the client whose features `target_id` consumes.
int cyclic_source(int target_id, int n_clients);

struct AlgoConfig {
  Algorithm algorithm = Algorithm::FedAvg;
  Aggregator aggregator = Aggregator::FedAvg;
  train::LocalTrainConfig local;  // mode is derived from `algorithm`
  std::size_t num_clients = 2;
  std::size_t bank_size = 4;
  std::size_t krum_f = 1;
  double participation = 1.0;  // fraction of clients selected per round
  std::size_t threads = 1;     // concurrent client trainers
  /// Serial execution order as 1-based client ids; empty means ascending.
  std::vector<int> execution_order;

  void validate() const;
  train::LocalTrainConfig local_config() const;
};

/// Payload accounting, in bytes.
struct ByteCounter {
  std::uint64_t uplink = 0;
  std::uint64_t downlink = 0;

  bool operator==(const ByteCounter&) const = default;
};

struct ServerState {
  seg::ModelConfig model;
  seg::TensorList global_segmentation;
  /// Producer client id -> detached features uploaded in round `round - 1`.
  std::map<int, std::vector<seg::FeatureMap>> feature_bank;
  int round = 0;
  ByteCounter cumulative;
  std::uint64_t seed = 0;
};

struct ClientState {
  int client_id = 1;
  std::vector<data::Sample> dataset;
  data::Modality modality = data::Modality::A;
  train::LocalModel model;
  std::uint64_t seed = 0;
  std::vector<ad::Tensor> target_features;
};

/// Server -> client message.
struct Broadcast {
  seg::TensorList segmentation;
  std::vector<seg::FeatureMap> features;
};

/// Client -> server message. Holds parameters and feature maps only.
struct ClientUpload {
  int client_id = 0;
  seg::TensorList segmentation;
  std::vector<seg::FeatureMap> features;
  double weight = 0.0;
};

struct ClientRoundStats {
  int client_id = 0;
  bool participated = false;
  double seg_loss = 0.0;
  double adv_loss = 0.0;
  double disc_loss = 0.0;
  ByteCounter bytes;
};

struct RoundReport {
  int round = 0;
  std::vector<ClientRoundStats> clients;
  metrics::ClassMetrics global;
  ByteCounter bytes;
};

struct RoundHooks {
  /// Called after every participant finished local training, before upload.
  std::function<void(const std::vector<ClientState>&)> after_local_training;
};

ServerState init_server(const seg::ModelConfig& model, std::uint64_t seed);
std::vector<ClientState> init_clients(const data::FederatedSplit& split, const seg::ModelConfig& model,
                                      const AlgoConfig& algo, std::uint64_t seed);

/// Private streams of a client in a round: purpose 0 = data order, 1 = discriminator, 2 = bank selection.
SeedStream client_stream(std::uint64_t seed, int client_id, int round, int purpose);

// ---- wire encoding -----------------------------------------------------------
std::vector<std::uint8_t> encode_broadcast(const Broadcast& b);
Broadcast decode_broadcast(std::span<const std::uint8_t> bytes, const seg::ModelConfig& model,
                           std::size_t feature_count, int producer_id, int round);
std::vector<std::uint8_t> encode_upload(const ClientUpload& u);
ClientUpload decode_upload(std::span<const std::uint8_t> bytes, const seg::ModelConfig& model,
                           std::size_t feature_count, int client_id, int round, double weight);

/// Predicted steady-state bytes per client per round.
ByteCounter account_payload(Algorithm algo, const seg::ModelConfig& model, std::size_t bank_size);

/// Client ids (ascending) taking part in `round`.
std::vector<int> select_participants(const ServerState& server, const AlgoConfig& algo);

/// Server-side aggregation and bank update. Iterates uploads in ascending client id.
void server_collect(ServerState& server, std::span<const ClientUpload> uploads, const AlgoConfig& algo);

RoundReport run_round(ServerState& server, std::vector<ClientState>& clients, const AlgoConfig& algo,
                      std::span<const data::Sample> global_test, const RoundHooks& hooks = {});

/// Global segmentation parameters wrapped as an evaluable model.
seg::ParamSet global_model(const ServerState& server);

}  // namespace fedda::fed
