#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fedda/harness.hpp"

namespace harness = fedda::harness;
namespace fed = fedda::fed;
using harness::ConfigErrorKind;

namespace {

std::filesystem::path scratch(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "fedda_harness_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

ConfigErrorKind error_kind(const std::string& text, std::size_t* line = nullptr) {
  try {
    harness::parse_config(text);
  } catch (const harness::ConfigError& e) {
    if (line) *line = e.line;
    return e.kind;
  }
  FAIL("config accepted: " << text);
  return ConfigErrorKind::Invalid;
}

harness::ExperimentConfig small(fed::Algorithm a, std::size_t rounds = 3) {
  harness::ExperimentConfig c;
  c.algorithm = a;
  c.rounds = rounds;
  c.data.patients_per_modality = 20;
  return c;
}

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) out.push_back(cell);
  return out;
}

}  // namespace

TEST_CASE("empty config yields the defaults") {
  const auto c = harness::parse_config("");
  CHECK(c.algorithm == fed::Algorithm::FedAvg);
  CHECK(c.num_clients == 2);
  CHECK(c.rounds == 100);
  CHECK(c.seed == 42);
  CHECK(c.bank_size == 4);
  CHECK(c.local == fedda::train::LocalTrainConfig{});
  CHECK(c.model == fedda::seg::ModelConfig{});
  CHECK(harness::parse_config("# only a comment\n\n   \n").seed == 42);
}

TEST_CASE("single assignment leaves everything else default") {
  const auto c = harness::parse_config("algorithm = fedda_cyclic\n");
  CHECK(c.algorithm == fed::Algorithm::FedDaCyclic);
  auto d = harness::parse_config("");
  d.algorithm = fed::Algorithm::FedDaCyclic;
  CHECK(c.local == d.local);
  CHECK(c.rounds == d.rounds);
  CHECK(c.output == d.output);
}

TEST_CASE("every documented key parses") {
  const std::string text =
      "seed = 7\nnum_clients = 4\nrounds = 9\nalgorithm = krum\naggregator = krum\nlr_backbone = 0.002\n"
      "lr_discriminator = 1e-5\nadv_weight = 0.3\nlocal_epochs = 2\nbatch_size = 8\nweight_decay = 0.01\n"
      "disc_weight_decay = 0\nfedprox_mu = 0.5\nimage_size = 12\nfeat_channels = 4\nnum_classes = 4\n"
      "patients_per_modality = 40\ntrain_ratio = 3\ntest_ratio = 1\nnoise_a = 0.02\nnoise_b = 0.2\n"
      "bank_size = 2\nkrum_f = 1\nparticipation = 1\nthreads = 2\noutput = out/x.csv  # trailing comment\n";
  const auto c = harness::parse_config(text);
  CHECK(c.seed == 7);
  CHECK(c.num_clients == 4);
  CHECK(c.rounds == 9);
  CHECK(c.algorithm == fed::Algorithm::Krum);
  CHECK(c.local.lr_backbone == 0.002);
  CHECK(c.local.local_epochs == 2);
  CHECK(c.local.fedprox_mu == 0.5);
  CHECK(c.model.image_size == 12);
  CHECK(c.model.num_classes == 4);
  CHECK(c.data.train_parts == 3);
  CHECK(c.data.noise_b == 0.2);
  CHECK(c.bank_size == 2);
  CHECK(c.threads == 2);
  CHECK(c.output == "out/x.csv");
  CHECK(harness::config_keys().size() == 26);
}

TEST_CASE("distinct line-numbered errors") {
  std::size_t line = 0;
  CHECK(error_kind("rounds = 3\nalgorithm = moon\n", &line) == ConfigErrorKind::BadEnum);
  CHECK(line == 2);
  try {
    harness::parse_config("algorithm = moon");
  } catch (const harness::ConfigError& e) {
    const std::string msg = e.what();
    for (const char* name : {"fedavg", "krum", "fedprox", "fedda_cyclic", "fedda_joint"})
      CHECK(msg.find(name) != std::string::npos);
  }
  CHECK(error_kind("\n\nlearning_rate = 1\n", &line) == ConfigErrorKind::UnknownKey);
  CHECK(line == 3);
  CHECK(error_kind("rounds 5\n", &line) == ConfigErrorKind::Syntax);
  CHECK(line == 1);
  CHECK(error_kind("rounds = five\n") == ConfigErrorKind::BadValue);
  CHECK(error_kind("rounds = -1\n") == ConfigErrorKind::BadValue);
  CHECK(error_kind("lr_backbone = 0\n") == ConfigErrorKind::OutOfRange);
  CHECK(error_kind("participation = 1.5\n") == ConfigErrorKind::OutOfRange);
  CHECK(error_kind("adv_weight = nan\n") == ConfigErrorKind::BadValue);
  CHECK(error_kind("seed = 1\nseed = 2\n", &line) == ConfigErrorKind::DuplicateKey);
  CHECK(line == 2);
  CHECK(error_kind("algorithm = krum\n", &line) == ConfigErrorKind::Invalid);
  CHECK(line == 0);
  CHECK(error_kind("patients_per_modality = 51\n") == ConfigErrorKind::Invalid);
}

TEST_CASE("numbers print with round-trip precision") {
  fedda::SeedStream rng(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = rng.normal() * std::pow(10.0, rng.uniform(-12, 12));
    CHECK(std::strtod(harness::format_number(v).c_str(), nullptr) == v);
  }
  CHECK(harness::format_number(std::uint64_t{65536}) == "65536");
}

TEST_CASE("csv schema") {
  const auto h = harness::csv_header(3);
  const std::vector<std::string> expect{"round",     "client_id", "seg_loss",     "adv_loss",      "disc_loss",
                                        "mean_dice", "mean_hd95", "dice_1",       "dice_2",        "hd95_1",
                                        "hd95_2",    "uplink_bytes", "downlink_bytes"};
  CHECK(h == expect);
}

TEST_CASE("zero rounds gives a header-only csv and an untrained summary") {
  auto c = small(fed::Algorithm::FedAvg, 0);
  c.output = scratch("zero.csv").string();
  const auto r = harness::run_experiment(c);
  CHECK(slurp(c.output) == "round,client_id,seg_loss,adv_loss,disc_loss,mean_dice,mean_hd95,dice_1,dice_2,hd95_1,"
                           "hd95_2,uplink_bytes,downlink_bytes\n");
  CHECK(r.summary.rounds == 0);
  CHECK(r.summary.total_bytes == fed::ByteCounter{});
  CHECK(r.summary.final_metrics.dice.size() == 2);
  CHECK(std::filesystem::exists(harness::summary_path(c.output)));
}

TEST_CASE("runs are byte-identical and cells round trip") {
  auto c = small(fed::Algorithm::FedDaCyclic);
  c.output = scratch("det_a.csv").string();
  const auto a = harness::run_experiment(c);
  c.output = scratch("det_b.csv").string();
  const auto b = harness::run_experiment(c);
  CHECK(slurp(scratch("det_a.csv")) == slurp(scratch("det_b.csv")));
  CHECK(a.summary_csv == b.summary_csv);

  std::stringstream ss(a.csv);
  std::string line;
  std::getline(ss, line);
  std::size_t rows = 0;
  while (std::getline(ss, line)) {
    const auto cells = split_line(line);
    CHECK(cells.size() == 13);
    for (const auto& cell : cells) CHECK(harness::format_number(std::strtod(cell.c_str(), nullptr)) == cell);
    ++rows;
  }
  CHECK(rows == 3 * 2);
}

TEST_CASE("summary carries last-round metrics and total bytes") {
  auto c = small(fed::Algorithm::FedDaJoint);
  c.output = scratch("summary.csv").string();
  const auto r = harness::run_experiment(c);
  CHECK(r.summary.final_metrics == r.reports.back().global);
  std::uint64_t up = 0;
  for (const auto& rep : r.reports) up += rep.bytes.uplink;
  CHECK(r.summary.total_bytes.uplink == up);
  const auto lines = split_line(slurp(harness::summary_path(c.output)).substr(
      slurp(harness::summary_path(c.output)).find('\n') + 1));
  CHECK(lines[0] == "3");
}

TEST_CASE("unwritable output is reported with its path") {
  auto c = small(fed::Algorithm::FedAvg, 1);
  const auto blocker = scratch("blocker");
  { std::ofstream(blocker) << "x"; }
  c.output = (blocker / "run.csv").string();
  try {
    harness::run_experiment(c);
    FAIL("write into a file path succeeded");
  } catch (const std::exception& e) {
    CHECK(std::string(e.what()).find("blocker") != std::string::npos);
  }
}

TEST_CASE("sweep") {
  auto c = small(fed::Algorithm::FedDaJoint, 2);
  c.output = scratch("sweep.csv").string();
  CHECK_THROWS_AS(harness::sweep(c, "lr_backbone", {"0.1"}), harness::ConfigError);
  CHECK_THROWS_AS(harness::sweep(c, "adv_weight", {}), harness::ConfigError);

  SUBCASE("single value equals a plain run") {
    const auto s = harness::sweep(c, "adv_weight", {"0.1"});
    REQUIRE(s.rows.size() == 1);
    auto single = c;
    single.output = scratch("single.csv").string();
    harness::run_experiment(single);
    CHECK(slurp(s.rows[0].csv_path) == slurp(single.output));
  }
  SUBCASE("zero weight row follows fedavg") {
    harness::RunOptions opts;
    opts.keep_trajectory = true;
    opts.write_files = false;
    auto zero = c;
    zero.local.adv_weight = 0.0;
    auto avg = c;
    avg.algorithm = fed::Algorithm::FedAvg;
    CHECK(harness::run_experiment(zero, opts).global_trajectory == harness::run_experiment(avg, opts).global_trajectory);
    const auto s = harness::sweep(c, "adv_weight", {"0.0", "0.5"});
    const auto avg_run = harness::run_experiment(avg, opts);
    CHECK(s.rows[0].summary.final_metrics == avg_run.summary.final_metrics);
  }
  SUBCASE("five values give five monotone csvs and a table") {
    const auto s = harness::sweep(c, "adv_weight", {"0", "0.05", "0.1", "0.2", "0.4"});
    REQUIRE(s.rows.size() == 5);
    for (const auto& row : s.rows) {
      std::stringstream ss(slurp(row.csv_path));
      std::string line;
      std::getline(ss, line);
      long prev = -1;
      while (std::getline(ss, line)) {
        const long r = std::stol(split_line(line)[0]);
        CHECK(r >= prev);
        prev = r;
      }
      CHECK(prev == 1);
    }
    const auto table = slurp(s.table_path);
    CHECK(std::count(table.begin(), table.end(), '\n') == 6);
  }
  SUBCASE("bank size and mu are sweepable") {
    auto cyc = small(fed::Algorithm::FedDaCyclic, 1);
    cyc.output = scratch("bank.csv").string();
    const auto s = harness::sweep(cyc, "bank_size", {"1", "3"});
    CHECK(s.rows[1].summary.total_bytes.uplink - s.rows[0].summary.total_bytes.uplink == 2u * 2 * 8 * 256 * 8);
    auto prox = small(fed::Algorithm::FedProx, 1);
    prox.output = scratch("mu.csv").string();
    CHECK(harness::sweep(prox, "fedprox_mu", {"0.01", "0.1"}).rows.size() == 2);
  }
}

TEST_CASE("load_config reports path context") {
  const auto p = scratch("bad.cfg");
  { std::ofstream(p) << "rounds = 1\nbogus = 2\n"; }
  try {
    harness::load_config(p);
    FAIL("accepted");
  } catch (const harness::ConfigError& e) {
    CHECK(e.line == 2);
    CHECK(std::string(e.what()).find("bad.cfg") != std::string::npos);
  }
  CHECK_THROWS(harness::load_config(scratch("missing.cfg")));
}
