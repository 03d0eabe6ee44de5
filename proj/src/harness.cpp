#include "fedda/harness.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <map>
#include <set>
#include <sstream>

namespace fedda::harness {
namespace {

constexpr std::uint64_t kDataTag = 0x44415441;  // "DATA"

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string at_line(std::size_t line) { return line ? "line " + std::to_string(line) + ": " : ""; }

std::uint64_t parse_uint(const std::string& key, const std::string& v, std::size_t line, std::uint64_t lo,
                         std::uint64_t hi) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty())
    throw ConfigError(ConfigErrorKind::BadValue, line, key + " expects a non-negative integer, got '" + v + "'");
  if (out < lo || out > hi)
    throw ConfigError(ConfigErrorKind::OutOfRange, line,
                      key + " = " + v + " outside [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return out;
}

enum class Bound { Inclusive, Exclusive };

double parse_real(const std::string& key, const std::string& v, std::size_t line, double lo, Bound lo_kind,
                  double hi = HUGE_VAL) {
  double out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size() || v.empty() || !std::isfinite(out))
    throw ConfigError(ConfigErrorKind::BadValue, line, key + " expects a finite number, got '" + v + "'");
  const bool low_ok = lo_kind == Bound::Inclusive ? out >= lo : out > lo;
  if (!low_ok || out > hi)
    throw ConfigError(ConfigErrorKind::OutOfRange, line,
                      key + " = " + v + (lo_kind == Bound::Inclusive ? " must be >= " : " must be > ") +
                          format_number(lo) + (hi < HUGE_VAL ? " and <= " + format_number(hi) : ""));
  return out;
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, std::size_t)>;

std::string algorithm_list() {
  return "fedavg, krum, fedprox, fedda_cyclic, fedda_joint";
}

const std::vector<std::pair<std::string, Setter>>& setters() {
  static const std::vector<std::pair<std::string, Setter>> table = [] {
    std::vector<std::pair<std::string, Setter>> t;
    auto uint_key = [&t](const std::string& name, auto member, std::uint64_t lo, std::uint64_t hi) {
      t.emplace_back(name, [name, member, lo, hi](ExperimentConfig& c, const std::string& v, std::size_t line) {
        member(c) = static_cast<std::remove_reference_t<decltype(member(c))>>(parse_uint(name, v, line, lo, hi));
      });
    };
    auto real_key = [&t](const std::string& name, auto member, double lo, Bound kind, double hi = HUGE_VAL) {
      t.emplace_back(name, [=](ExperimentConfig& c, const std::string& v, std::size_t line) {
        member(c) = parse_real(name, v, line, lo, kind, hi);
      });
    };
    constexpr std::uint64_t kMax = std::numeric_limits<std::uint64_t>::max();

    uint_key("seed", [](ExperimentConfig& c) -> std::uint64_t& { return c.seed; }, 0, kMax);
    uint_key("num_clients", [](ExperimentConfig& c) -> std::size_t& { return c.num_clients; }, 1, 1024);
    uint_key("rounds", [](ExperimentConfig& c) -> std::size_t& { return c.rounds; }, 0, 1000000);
    t.emplace_back("algorithm", [](ExperimentConfig& c, const std::string& v, std::size_t line) {
      auto a = fed::parse_algorithm(v);
      if (!a)
        throw ConfigError(ConfigErrorKind::BadEnum, line,
                          "algorithm '" + v + "' is not one of: " + algorithm_list());
      c.algorithm = *a;
    });
    t.emplace_back("aggregator", [](ExperimentConfig& c, const std::string& v, std::size_t line) {
      if (v == "auto") {
        c.aggregator.reset();
        return;
      }
      auto a = fed::parse_aggregator(v);
      if (!a) throw ConfigError(ConfigErrorKind::BadEnum, line, "aggregator '" + v + "' is not one of: auto, fedavg, krum");
      c.aggregator = *a;
    });
    real_key("lr_backbone", [](ExperimentConfig& c) -> double& { return c.local.lr_backbone; }, 0, Bound::Exclusive);
    real_key("lr_discriminator", [](ExperimentConfig& c) -> double& { return c.local.lr_discriminator; }, 0,
             Bound::Exclusive);
    real_key("adv_weight", [](ExperimentConfig& c) -> double& { return c.local.adv_weight; }, 0, Bound::Inclusive);
    uint_key("local_epochs", [](ExperimentConfig& c) -> std::size_t& { return c.local.local_epochs; }, 1, 10000);
    uint_key("batch_size", [](ExperimentConfig& c) -> std::size_t& { return c.local.batch_size; }, 1, 100000);
    real_key("weight_decay", [](ExperimentConfig& c) -> double& { return c.local.weight_decay; }, 0,
             Bound::Inclusive);
    real_key("disc_weight_decay", [](ExperimentConfig& c) -> double& { return c.local.disc_weight_decay; }, 0,
             Bound::Inclusive);
    real_key("fedprox_mu", [](ExperimentConfig& c) -> double& { return c.local.fedprox_mu; }, 0, Bound::Inclusive);
    uint_key("image_size", [](ExperimentConfig& c) -> std::size_t& { return c.model.image_size; }, 8, 4096);
    uint_key("feat_channels", [](ExperimentConfig& c) -> std::size_t& { return c.model.feat_channels; }, 2, 1024);
    uint_key("num_classes", [](ExperimentConfig& c) -> std::size_t& { return c.model.num_classes; }, 2, 255);
    uint_key("patients_per_modality", [](ExperimentConfig& c) -> std::size_t& { return c.data.patients_per_modality; },
             1, 10000000);
    uint_key("train_ratio", [](ExperimentConfig& c) -> std::size_t& { return c.data.train_parts; }, 1, 1000);
    uint_key("test_ratio", [](ExperimentConfig& c) -> std::size_t& { return c.data.test_parts; }, 1, 1000);
    real_key("noise_a", [](ExperimentConfig& c) -> double& { return c.data.noise_a; }, 0, Bound::Inclusive);
    real_key("noise_b", [](ExperimentConfig& c) -> double& { return c.data.noise_b; }, 0, Bound::Inclusive);
    uint_key("bank_size", [](ExperimentConfig& c) -> std::size_t& { return c.bank_size; }, 1, 100000);
    uint_key("krum_f", [](ExperimentConfig& c) -> std::size_t& { return c.krum_f; }, 0, 1000);
    real_key("participation", [](ExperimentConfig& c) -> double& { return c.participation; }, 0, Bound::Exclusive,
             1.0);
    uint_key("threads", [](ExperimentConfig& c) -> std::size_t& { return c.threads; }, 1, 256);
    t.emplace_back("output", [](ExperimentConfig& c, const std::string& v, std::size_t line) {
      if (v.empty()) throw ConfigError(ConfigErrorKind::BadValue, line, "output path must not be empty");
      c.output = v;
    });
    return t;
  }();
  return table;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw std::runtime_error("cannot open " + path.string() + " for writing");
  os << text;
  if (!os) throw std::runtime_error("write failed: " + path.string());
}

std::string join(const std::vector<std::string>& cells) {
  std::string out;
  for (std::size_t i = 0; i < cells.size(); ++i) {
    if (i) out += ',';
    out += cells[i];
  }
  return out;
}

std::string summary_text(const RunSummary& s) {
  std::vector<std::string> head{"rounds", "mean_dice", "mean_hd95"};
  std::vector<std::string> row{format_number(static_cast<std::uint64_t>(s.rounds)),
                               format_number(s.final_metrics.mean_dice), format_number(s.final_metrics.mean_hd95)};
  for (std::size_t k = 0; k < s.final_metrics.dice.size(); ++k) {
    head.push_back("dice_" + std::to_string(k + 1));
    row.push_back(format_number(s.final_metrics.dice[k]));
  }
  for (std::size_t k = 0; k < s.final_metrics.hd95.size(); ++k) {
    head.push_back("hd95_" + std::to_string(k + 1));
    row.push_back(format_number(s.final_metrics.hd95[k]));
  }
  head.insert(head.end(), {"total_uplink_bytes", "total_downlink_bytes"});
  row.push_back(format_number(s.total_bytes.uplink));
  row.push_back(format_number(s.total_bytes.downlink));
  return join(head) + "\n" + join(row) + "\n";
}

}  // namespace

ConfigError::ConfigError(ConfigErrorKind kind, std::size_t line, const std::string& message)
    : std::runtime_error(at_line(line) + message), kind(kind), line(line) {}

void ExperimentConfig::validate() const {
  try {
    model.validate();
    data_config().validate();
    algo_config().validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(ConfigErrorKind::Invalid, 0, e.what());
  }
  if (model.in_channels != 1) throw ConfigError(ConfigErrorKind::Invalid, 0, "synthetic data is single-channel");
}

fed::AlgoConfig ExperimentConfig::algo_config() const {
  fed::AlgoConfig a;
  a.algorithm = algorithm;
  a.aggregator = aggregator.value_or(fed::default_aggregator(algorithm));
  a.local = local;
  a.local.mode = fed::training_mode(algorithm);
  a.num_clients = num_clients;
  a.bank_size = bank_size;
  a.krum_f = krum_f;
  a.participation = participation;
  a.threads = threads;
  return a;
}

data::DataConfig ExperimentConfig::data_config() const {
  data::DataConfig d = data;
  d.image_size = model.image_size;
  d.num_classes = model.num_classes;
  d.num_clients = num_clients;
  return d;
}

const std::vector<std::string>& config_keys() {
  static const std::vector<std::string> keys = [] {
    std::vector<std::string> k;
    for (const auto& [name, _] : setters()) k.push_back(name);
    return k;
  }();
  return keys;
}

const std::vector<std::string>& sweepable_keys() {
  static const std::vector<std::string> keys{"adv_weight", "bank_size", "fedprox_mu"};
  return keys;
}

void apply_setting(ExperimentConfig& cfg, const std::string& key, const std::string& value, std::size_t line) {
  for (const auto& [name, set] : setters()) {
    if (name == key) {
      set(cfg, value, line);
      return;
    }
  }
  throw ConfigError(ConfigErrorKind::UnknownKey, line, "unknown key '" + key + "'");
}

ExperimentConfig parse_config(const std::string& text) {
  ExperimentConfig cfg;
  std::istringstream in(text);
  std::string raw;
  std::set<std::string> seen;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string content = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (content.empty()) continue;
    const auto eq = content.find('=');
    if (eq == std::string::npos)
      throw ConfigError(ConfigErrorKind::Syntax, line, "expected 'key = value', got '" + content + "'");
    const std::string key = trim(content.substr(0, eq));
    const std::string value = trim(content.substr(eq + 1));
    if (key.empty()) throw ConfigError(ConfigErrorKind::Syntax, line, "missing key before '='");
    if (!seen.insert(key).second) throw ConfigError(ConfigErrorKind::DuplicateKey, line, "duplicate key '" + key + "'");
    apply_setting(cfg, key, value, line);
  }
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw std::runtime_error("cannot read config " + path.string());
  std::stringstream ss;
  ss << is.rdbuf();
  try {
    return parse_config(ss.str());
  } catch (const ConfigError& e) {
    throw ConfigError(e.kind, e.line, path.string() + ": " + std::string(e.what()));
  }
}

std::string format_number(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string format_number(std::uint64_t v) { return std::to_string(v); }

std::vector<std::string> csv_header(std::size_t num_classes) {
  std::vector<std::string> h{"round", "client_id", "seg_loss", "adv_loss", "disc_loss", "mean_dice", "mean_hd95"};
  for (std::size_t k = 1; k < num_classes; ++k) h.push_back("dice_" + std::to_string(k));
  for (std::size_t k = 1; k < num_classes; ++k) h.push_back("hd95_" + std::to_string(k));
  h.push_back("uplink_bytes");
  h.push_back("downlink_bytes");
  return h;
}

std::vector<std::string> csv_rows(const fed::RoundReport& report) {
  std::vector<std::string> rows;
  for (const auto& c : report.clients) {
    if (!c.participated) continue;
    std::vector<std::string> cells{format_number(static_cast<std::uint64_t>(report.round)),
                                   format_number(static_cast<std::uint64_t>(c.client_id)),
                                   format_number(c.seg_loss),
                                   format_number(c.adv_loss),
                                   format_number(c.disc_loss),
                                   format_number(report.global.mean_dice),
                                   format_number(report.global.mean_hd95)};
    for (double d : report.global.dice) cells.push_back(format_number(d));
    for (double d : report.global.hd95) cells.push_back(format_number(d));
    cells.push_back(format_number(c.bytes.uplink));
    cells.push_back(format_number(c.bytes.downlink));
    rows.push_back(join(cells));
  }
  return rows;
}

data::FederatedSplit build_split(const ExperimentConfig& cfg) {
  SeedStream rng(mix_seed({cfg.seed, kDataTag}));
  return data::make_split(rng, cfg.data_config());
}

std::filesystem::path summary_path(const std::filesystem::path& csv_path) {
  std::filesystem::path p = csv_path;
  p.replace_filename(csv_path.stem().string() + "_summary.csv");
  return p;
}

ExperimentResult run_experiment(const ExperimentConfig& cfg, const RunOptions& opts) {
  cfg.validate();
  fed::AlgoConfig algo = cfg.algo_config();
  algo.execution_order = opts.execution_order;
  const data::FederatedSplit split = build_split(cfg);
  fed::ServerState server = fed::init_server(cfg.model, cfg.seed);
  std::vector<fed::ClientState> clients = fed::init_clients(split, cfg.model, algo, cfg.seed);

  ExperimentResult result;
  std::string csv = join(csv_header(cfg.model.num_classes)) + "\n";
  for (std::size_t r = 0; r < cfg.rounds; ++r) {
    fed::RoundReport report = fed::run_round(server, clients, algo, split.global_test, opts.hooks);
    for (const auto& row : csv_rows(report)) csv += row + "\n";
    if (opts.keep_trajectory) result.global_trajectory.push_back(server.global_segmentation);
    if (opts.on_round) opts.on_round(report);
    result.reports.push_back(std::move(report));
  }

  result.summary.rounds = cfg.rounds;
  result.summary.total_bytes = server.cumulative;
  result.summary.final_metrics = result.reports.empty()
                                     ? metrics::evaluate_global(fed::global_model(server), split.global_test)
                                     : result.reports.back().global;
  result.csv = std::move(csv);
  result.summary_csv = summary_text(result.summary);
  if (opts.write_files) {
    write_text(cfg.output, result.csv);
    write_text(summary_path(cfg.output), result.summary_csv);
  }
  return result;
}

SweepResult sweep(const ExperimentConfig& cfg, const std::string& key, const std::vector<std::string>& values,
                  const RunOptions& opts) {
  const auto& allowed = sweepable_keys();
  if (std::find(allowed.begin(), allowed.end(), key) == allowed.end())
    throw ConfigError(ConfigErrorKind::UnknownKey, 0,
                      "'" + key + "' is not sweepable (choose adv_weight, bank_size or fedprox_mu)");
  if (values.empty()) throw ConfigError(ConfigErrorKind::BadValue, 0, "sweep needs at least one value");

  const std::filesystem::path base(cfg.output);
  SweepResult out;
  std::string table = key + ",mean_dice,mean_hd95,total_uplink_bytes\n";
  for (const std::string& value : values) {
    ExperimentConfig run = cfg;
    apply_setting(run, key, value);
    std::filesystem::path csv = base;
    csv.replace_filename(base.stem().string() + "_" + key + "_" + value + ".csv");
    run.output = csv.string();
    ExperimentResult r = run_experiment(run, opts);
    table += value + "," + format_number(r.summary.final_metrics.mean_dice) + "," +
             format_number(r.summary.final_metrics.mean_hd95) + "," + format_number(r.summary.total_bytes.uplink) +
             "\n";
    out.rows.push_back({value, csv, r.summary});
  }
  out.table_csv = table;
  out.table_path = base;
  out.table_path.replace_filename(base.stem().string() + "_sweep_" + key + ".csv");
  if (opts.write_files) write_text(out.table_path, table);
  return out;
}

}  // namespace fedda::harness
