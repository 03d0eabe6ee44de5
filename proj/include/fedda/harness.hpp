#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "fedda/fedcore.hpp"

// Experiment configuration, orchestration and CSV reporting.
//
// Config files are flat `key = value` lines; `#` starts a comment. Absent keys
// keep their defaults and unknown keys are errors.

namespace fedda::harness {

enum class ConfigErrorKind { Syntax, UnknownKey, BadValue, OutOfRange, BadEnum, DuplicateKey, Invalid };

struct ConfigError : std::runtime_error {
  ConfigError(ConfigErrorKind kind, std::size_t line, const std::string& message);
  ConfigErrorKind kind;
  std::size_t line;  // 1-based; 0 for whole-config validation
};

struct ExperimentConfig {
  std::uint64_t seed = 42;
  std::size_t num_clients = 2;
  std::size_t rounds = 100;
  fed::Algorithm algorithm = fed::Algorithm::FedAvg;
  std::optional<fed::Aggregator> aggregator;  // unset: the algorithm's own
  train::LocalTrainConfig local;
  seg::ModelConfig model;
  data::DataConfig data;
  std::size_t bank_size = 4;
  std::size_t krum_f = 1;
  double participation = 1.0;
  std::size_t threads = 1;
  std::string output = "fedda_run.csv";

  /// Cross-field checks; throws ConfigError with line 0.
  void validate() const;
  fed::AlgoConfig algo_config() const;
  /// Data config with image size, classes and client count taken from this config.
  data::DataConfig data_config() const;
};

/// Keys accepted by parse_config, in documentation order.
const std::vector<std::string>& config_keys();
/// Keys sweep() accepts.
const std::vector<std::string>& sweepable_keys();

ExperimentConfig parse_config(const std::string& text);
ExperimentConfig load_config(const std::filesystem::path& path);
/// Applies one `key = value` assignment; `line` is used for error reporting.
void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value, std::size_t line = 0);

/// Shortest-safe round-trip form: 17 significant digits.
std::string format_number(double v);
std::string format_number(std::uint64_t v);

std::vector<std::string> csv_header(std::size_t num_classes);
std::vector<std::string> csv_rows(const fed::RoundReport& report);

struct RunSummary {
  std::size_t rounds = 0;
  metrics::ClassMetrics final_metrics;
  fed::ByteCounter total_bytes;
};

struct ExperimentResult {
  std::vector<fed::RoundReport> reports;
  RunSummary summary;
  std::string csv;
  std::string summary_csv;
  /// Global segmentation parameters after each round (index r = after round r).
  std::vector<seg::TensorList> global_trajectory;
};

struct RunOptions {
  bool write_files = true;
  bool keep_trajectory = false;
  std::function<void(const fed::RoundReport&)> on_round;
  fed::RoundHooks hooks;
  std::vector<int> execution_order;
};

data::FederatedSplit build_split(const ExperimentConfig& cfg);

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts = {});

/// Path of the summary file written next to a run's CSV.
std::filesystem::path summary_path(const std::filesystem::path& csv_path);

struct SweepRow {
  std::string value;
  std::filesystem::path csv_path;
  RunSummary summary;
};

struct SweepResult {
  std::vector<SweepRow> rows;
  std::string table_csv;
  std::filesystem::path table_path;
};

SweepResult sweep(const ExperimentConfig& cfg, const std::string& key, const std::vector<std::string>& values,
                  const RunOptions& opts = {});

}  // namespace fedda::harness
