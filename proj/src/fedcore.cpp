#include "fedda/fedcore.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <thread>

#include "fedda/aggregators.hpp"
#include "fedda/bytes.hpp"

namespace fedda::fed {
namespace {

constexpr std::uint64_t kInitTag = 0x494E4954;    // "INIT"
constexpr std::uint64_t kClientTag = 0x434C4E54;  // "CLNT"
constexpr std::uint64_t kDiscInitTag = 0x44495343;
constexpr std::uint64_t kParticipationTag = 0x50415254;

}  // namespace

const char* algorithm_name(Algorithm a) {
  switch (a) {
    case Algorithm::FedAvg: return "fedavg";
    case Algorithm::Krum: return "krum";
    case Algorithm::FedProx: return "fedprox";
    case Algorithm::FedDaCyclic: return "fedda_cyclic";
    case Algorithm::FedDaJoint: return "fedda_joint";
  }
  return "?";
}

std::optional<Algorithm> parse_algorithm(const std::string& name) {
  for (Algorithm a : {Algorithm::FedAvg, Algorithm::Krum, Algorithm::FedProx, Algorithm::FedDaCyclic,
                      Algorithm::FedDaJoint})
    if (name == algorithm_name(a)) return a;
  return std::nullopt;
}

const char* aggregator_name(Aggregator a) { return a == Aggregator::FedAvg ? "fedavg" : "krum"; }

std::optional<Aggregator> parse_aggregator(const std::string& name) {
  if (name == "fedavg") return Aggregator::FedAvg;
  if (name == "krum") return Aggregator::Krum;
  return std::nullopt;
}

train::Mode training_mode(Algorithm a) {
  switch (a) {
    case Algorithm::FedAvg:
    case Algorithm::Krum: return train::Mode::Plain;
    case Algorithm::FedProx: return train::Mode::FedProx;
    case Algorithm::FedDaCyclic: return train::Mode::Cyclic;
    case Algorithm::FedDaJoint: return train::Mode::Joint;
  }
  return train::Mode::Plain;
}

Aggregator default_aggregator(Algorithm a) { return a == Algorithm::Krum ? Aggregator::Krum : Aggregator::FedAvg; }

int cyclic_target(int source_id, int n_clients) {
  if (n_clients < 1) throw std::invalid_argument("cyclic_target: need at least one client");
  if (source_id < 1 || source_id > n_clients)
    throw std::out_of_range("cyclic_target: source " + std::to_string(source_id) + " outside [1," +
                            std::to_string(n_clients) + "]");
  return (source_id % n_clients) + 1;
}

int cyclic_source(int target_id, int n_clients) {
  if (n_clients < 1) throw std::invalid_argument("cyclic_source: need at least one client");
  if (target_id < 1 || target_id > n_clients)
    throw std::out_of_range("cyclic_source: target " + std::to_string(target_id) + " outside [1," +
                            std::to_string(n_clients) + "]");
  return target_id == 1 ? n_clients : target_id - 1;
}

void AlgoConfig::validate() const {
  local.validate();
  if (num_clients < 1) throw std::invalid_argument("num_clients must be >= 1");
  if (bank_size < 1) throw std::invalid_argument("bank_size must be >= 1");
  if (!(participation > 0.0 && participation <= 1.0)) throw std::invalid_argument("participation must be in (0,1]");
  if (threads < 1) throw std::invalid_argument("threads must be >= 1");
  if (aggregator == Aggregator::Krum) {
    const auto per_round = static_cast<std::size_t>(std::ceil(participation * static_cast<double>(num_clients)));
    if (per_round < krum_f + 3)
      throw std::invalid_argument("krum needs at least krum_f + 3 = " + std::to_string(krum_f + 3) +
                                  " participating clients, got " + std::to_string(per_round));
  }
  if (!execution_order.empty()) {
    std::vector<int> sorted = execution_order;
    std::sort(sorted.begin(), sorted.end());
    for (std::size_t i = 0; i < sorted.size(); ++i)
      if (sorted.size() != num_clients || sorted[i] != static_cast<int>(i) + 1)
        throw std::invalid_argument("execution_order must be a permutation of 1..num_clients");
  }
}

train::LocalTrainConfig AlgoConfig::local_config() const {
  train::LocalTrainConfig c = local;
  c.mode = training_mode(algorithm);
  return c;
}

SeedStream client_stream(std::uint64_t seed, int client_id, int round, int purpose) {
  return SeedStream(mix_seed({seed, kClientTag, static_cast<std::uint64_t>(client_id),
                              static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(purpose)}));
}

ServerState init_server(const seg::ModelConfig& model, std::uint64_t seed) {
  SeedStream rng(mix_seed({seed, kInitTag}));
  ServerState s;
  s.model = model;
  s.global_segmentation = seg::build_model(model, rng).segmentation();
  s.seed = seed;
  return s;
}

std::vector<ClientState> init_clients(const data::FederatedSplit& split, const seg::ModelConfig& model,
                                      const AlgoConfig& algo, std::uint64_t seed) {
  if (split.client_datasets.size() != algo.num_clients)
    throw std::invalid_argument("split has " + std::to_string(split.client_datasets.size()) +
                                " client datasets, config expects " + std::to_string(algo.num_clients));
  const train::LocalTrainConfig local = algo.local_config();
  std::vector<ClientState> clients;
  for (std::size_t i = 0; i < split.client_datasets.size(); ++i) {
    ClientState c;
    c.client_id = static_cast<int>(i) + 1;
    c.dataset = split.client_datasets[i];
    c.modality = split.client_modalities[i];
    c.seed = seed;
    SeedStream rng(mix_seed({seed, kDiscInitTag, static_cast<std::uint64_t>(c.client_id)}));
    // Segmentation weights are overwritten by the first broadcast; only the discriminator init matters.
    c.model = train::make_local_model(seg::build_model(model, rng), local);
    clients.push_back(std::move(c));
  }
  return clients;
}

std::vector<std::uint8_t> encode_broadcast(const Broadcast& b) {
  ByteWriter w;
  w.raw(seg::serialize(b.segmentation));
  for (const auto& f : b.features) w.raw(seg::serialize_feature(f));
  return w.take();
}

Broadcast decode_broadcast(std::span<const std::uint8_t> bytes, const seg::ModelConfig& model,
                           std::size_t feature_count, int producer_id, int round) {
  ByteReader r(bytes);
  Broadcast b;
  b.segmentation = seg::read_tensor_list(r);
  for (std::size_t i = 0; i < feature_count; ++i) b.features.push_back(seg::read_feature(r, model, producer_id, round));
  if (r.remaining() != 0) throw std::invalid_argument("broadcast: trailing bytes");
  return b;
}

std::vector<std::uint8_t> encode_upload(const ClientUpload& u) {
  ByteWriter w;
  w.raw(seg::serialize(u.segmentation));
  for (const auto& f : u.features) w.raw(seg::serialize_feature(f));
  return w.take();
}

ClientUpload decode_upload(std::span<const std::uint8_t> bytes, const seg::ModelConfig& model,
                           std::size_t feature_count, int client_id, int round, double weight) {
  ByteReader r(bytes);
  ClientUpload u;
  u.client_id = client_id;
  u.weight = weight;
  u.segmentation = seg::read_tensor_list(r);
  for (std::size_t i = 0; i < feature_count; ++i) u.features.push_back(seg::read_feature(r, model, client_id, round));
  if (r.remaining() != 0) throw std::invalid_argument("upload: trailing bytes");
  return u;
}

ByteCounter account_payload(Algorithm algo, const seg::ModelConfig& model, std::size_t bank_size) {
  SeedStream rng(0);
  const std::uint64_t params = seg::serialized_size(seg::build_model(model, rng).segmentation());
  ByteCounter c{params, params};
  if (algo == Algorithm::FedDaCyclic) {
    const std::uint64_t features = static_cast<std::uint64_t>(bank_size) * model.feat_channels * model.image_size *
                                   model.image_size * sizeof(double);
    c.uplink += features;
    c.downlink += features;
  }
  return c;
}

std::vector<int> select_participants(const ServerState& server, const AlgoConfig& algo) {
  std::vector<int> ids(algo.num_clients);
  std::iota(ids.begin(), ids.end(), 1);
  if (algo.participation >= 1.0) return ids;
  auto k = static_cast<std::size_t>(std::ceil(algo.participation * static_cast<double>(algo.num_clients)));
  if (algo.aggregator == Aggregator::Krum) k = std::max(k, algo.krum_f + 3);
  k = std::clamp<std::size_t>(k, 1, algo.num_clients);
  SeedStream rng(mix_seed({server.seed, kParticipationTag, static_cast<std::uint64_t>(server.round)}));
  rng.shuffle(ids);
  ids.resize(k);
  std::sort(ids.begin(), ids.end());
  return ids;
}

void server_collect(ServerState& server, std::span<const ClientUpload> uploads, const AlgoConfig& algo) {
  if (uploads.empty()) throw std::invalid_argument("server_collect: no uploads");
  std::vector<const ClientUpload*> ordered;
  for (const auto& u : uploads) ordered.push_back(&u);
  std::sort(ordered.begin(), ordered.end(),
            [](const ClientUpload* a, const ClientUpload* b) { return a->client_id < b->client_id; });

  agg::AggregationInput in;
  in.krum_f = algo.krum_f;
  for (const ClientUpload* u : ordered) {
    for (const auto& nt : u->segmentation)
      if (nt.name.rfind("discriminator.", 0) == 0)
        throw std::logic_error("discriminator parameter '" + nt.name + "' in an upload");
    in.updates.push_back(seg::flatten(u->segmentation));
    in.weights.push_back(u->weight);
  }
  std::vector<double> next = algo.aggregator == Aggregator::Krum ? agg::krum_select(in).vector
                                                                 : agg::fedavg_aggregate(in);
  server.global_segmentation = seg::unflatten(server.global_segmentation, next);

  server.feature_bank.clear();
  for (const ClientUpload* u : ordered)
    if (!u->features.empty()) server.feature_bank[u->client_id] = u->features;
}

seg::ParamSet global_model(const ServerState& server) {
  seg::ParamSet p;
  p.config = server.model;
  for (const auto& nt : server.global_segmentation)
    (nt.name.rfind("backbone.", 0) == 0 ? p.backbone : p.decoder).push_back(nt);
  return p;
}

namespace {

struct PendingClient {
  ClientState* client = nullptr;
  Broadcast delivery;
  ClientRoundStats stats;
  std::vector<std::uint8_t> upload_bytes;
  std::size_t feature_count = 0;
};

void train_one(PendingClient& job, const AlgoConfig& algo, int round) {
  ClientState& c = *job.client;
  const train::LocalTrainConfig local = algo.local_config();
  c.model.params.set_segmentation(job.delivery.segmentation);
  const seg::ParamSet snapshot = c.model.params;

  train::RoundInputs inputs;
  inputs.global_snapshot = &snapshot;
  inputs.data_rng = client_stream(c.seed, c.client_id, round, 0);
  inputs.disc_rng = client_stream(c.seed, c.client_id, round, 1);
  if (local.mode == train::Mode::Cyclic) {
    c.target_features = train::acquire_targets_cyclic(job.delivery.features, c.model.params.config);
    inputs.targets = c.target_features;
  } else {
    c.target_features.clear();
  }

  const train::LossSummary loss = train::local_train(c.model, c.dataset, inputs, local);
  job.stats.seg_loss = loss.seg_loss;
  job.stats.adv_loss = loss.adv_loss;
  job.stats.disc_loss = loss.disc_loss;
}

ClientUpload make_upload(const ClientState& c, const AlgoConfig& algo, int round) {
  ClientUpload u;
  u.client_id = c.client_id;
  u.segmentation = c.model.params.segmentation();
  u.weight = static_cast<double>(c.dataset.size());
  if (training_mode(algo.algorithm) == train::Mode::Cyclic) {
    SeedStream pick = client_stream(c.seed, c.client_id, round, 2);
    for (std::size_t i = 0; i < algo.bank_size; ++i) {
      const auto& sample = c.dataset[pick.below(c.dataset.size())];
      u.features.push_back({seg::extract_features(c.model.params, sample.image), c.client_id, round});
    }
  }
  return u;
}

}  // namespace

RoundReport run_round(ServerState& server, std::vector<ClientState>& clients, const AlgoConfig& algo,
                      std::span<const data::Sample> global_test, const RoundHooks& hooks) {
  algo.validate();
  if (clients.size() != algo.num_clients)
    throw std::invalid_argument("run_round: " + std::to_string(clients.size()) + " clients, config expects " +
                                std::to_string(algo.num_clients));
  for (std::size_t i = 0; i < clients.size(); ++i)
    if (clients[i].client_id != static_cast<int>(i) + 1)
      throw std::invalid_argument("run_round: clients must be ordered by id 1..N");

  const int round = server.round;
  const int n = static_cast<int>(algo.num_clients);
  const bool cyclic = training_mode(algo.algorithm) == train::Mode::Cyclic;
  const std::vector<int> participants = select_participants(server, algo);

  RoundReport report;
  report.round = round;
  for (const auto& c : clients) report.clients.push_back({c.client_id, false, 0, 0, 0, {}});

  // (1)+(2) broadcast and feature delivery, through the wire encoding.
  std::vector<PendingClient> jobs;
  for (int id : participants) {
    PendingClient job;
    job.client = &clients[static_cast<std::size_t>(id - 1)];
    Broadcast b;
    b.segmentation = server.global_segmentation;
    int producer = 0;
    if (cyclic && n > 1) {
      producer = cyclic_source(id, n);
      if (auto it = server.feature_bank.find(producer); it != server.feature_bank.end()) b.features = it->second;
    }
    const int feature_round = b.features.empty() ? round - 1 : b.features.front().round;
    const auto bytes = encode_broadcast(b);
    job.delivery = decode_broadcast(bytes, server.model, b.features.size(), producer, feature_round);
    job.stats = {id, true, 0, 0, 0, {0, static_cast<std::uint64_t>(bytes.size())}};
    jobs.push_back(std::move(job));
  }

  // (3) local training.
  std::vector<std::size_t> order(jobs.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  if (!algo.execution_order.empty()) {
    order.clear();
    for (int id : algo.execution_order)
      for (std::size_t j = 0; j < jobs.size(); ++j)
        if (jobs[j].client->client_id == id) order.push_back(j);
  }
  if (algo.threads > 1 && jobs.size() > 1) {
    std::vector<std::thread> workers;
    std::vector<std::exception_ptr> errors(algo.threads);
    for (std::size_t w = 0; w < std::min(algo.threads, jobs.size()); ++w) {
      workers.emplace_back([&, w] {
        try {
          for (std::size_t k = w; k < order.size(); k += algo.threads) train_one(jobs[order[k]], algo, round);
        } catch (...) {
          errors[w] = std::current_exception();
        }
      });
    }
    for (auto& t : workers) t.join();
    for (auto& e : errors)
      if (e) std::rethrow_exception(e);
  } else {
    for (std::size_t k : order) train_one(jobs[k], algo, round);
  }
  if (hooks.after_local_training) hooks.after_local_training(clients);

  // (4) upload, (5) aggregate in ascending client id.
  std::vector<ClientUpload> received;
  for (auto& job : jobs) {
    const ClientUpload u = make_upload(*job.client, algo, round);
    const auto bytes = encode_upload(u);
    job.stats.bytes.uplink = bytes.size();
    received.push_back(decode_upload(bytes, server.model, u.features.size(), u.client_id, round, u.weight));
  }
  server_collect(server, received, algo);

  // (6) evaluate, (7) account.
  report.global = metrics::evaluate_global(global_model(server), global_test);
  for (const auto& job : jobs) {
    report.clients[static_cast<std::size_t>(job.stats.client_id - 1)] = job.stats;
    report.bytes.uplink += job.stats.bytes.uplink;
    report.bytes.downlink += job.stats.bytes.downlink;
  }
  server.cumulative.uplink += report.bytes.uplink;
  server.cumulative.downlink += report.bytes.downlink;
  server.round += 1;
  return report;
}

}  // namespace fedda::fed
