#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "fedda/synthdata.hpp"

namespace data = fedda::data;
namespace ad = fedda::ad;
using data::Modality;
using fedda::SeedStream;

namespace {

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "fedda_synth_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("sample generation is deterministic") {
  data::DataConfig cfg;
  SeedStream a(1), b(1);
  CHECK(data::synth_sample(a, cfg, Modality::A, 3) == data::synth_sample(b, cfg, Modality::A, 3));
  SeedStream c(1), d(1);
  CHECK(data::synth_sample(c, cfg, Modality::B, 3) == data::synth_sample(d, cfg, Modality::B, 3));
}

TEST_CASE("mask values stay inside the class range") {
  for (std::size_t classes : {2u, 3u, 5u}) {
    data::DataConfig cfg;
    cfg.num_classes = classes;
    SeedStream rng(2);
    for (int i = 0; i < 50; ++i) {
      const auto s = data::synth_sample(rng, cfg, i % 2 ? Modality::A : Modality::B, 0);
      for (int v : s.mask.cells) {
        CHECK(v >= 0);
        CHECK(v < static_cast<int>(classes));
      }
      for (double x : s.image.data()) {
        CHECK(x >= 0.0);
        CHECK(x <= 1.0);
        CHECK(static_cast<double>(static_cast<float>(x)) == x);
      }
    }
  }
}

TEST_CASE("foreground fraction over 1000 samples") {
  data::DataConfig cfg;
  SeedStream rng(3);
  double fg = 0;
  for (int i = 0; i < 1000; ++i) {
    const auto s = data::synth_sample(rng, cfg, Modality::A, 0);
    std::size_t n = 0;
    for (int v : s.mask.cells) n += v != 0;
    fg += static_cast<double>(n) / static_cast<double>(s.mask.size());
  }
  fg /= 1000;
  CHECK(fg >= 0.05);
  CHECK(fg <= 0.6);
}

TEST_CASE("noise-free modality transforms") {
  data::DataConfig cfg;
  cfg.noise_a = 0;
  cfg.noise_b = 0;
  SeedStream rng(4);
  ad::Tensor base({1, 16, 16});
  for (double& v : base.data()) v = static_cast<double>(static_cast<float>(rng.uniform()));
  CHECK(data::modality_transform(base, Modality::A, rng, cfg) == base);

  ad::Tensor flat({1, 16, 16}, 0.25);
  const auto b = data::modality_transform(flat, Modality::B, rng, cfg);
  for (double v : b.data()) CHECK(v == 0.75);
}

TEST_CASE("modalities differ substantially") {
  data::DataConfig cfg;
  SeedStream rng(5);
  double total = 0;
  std::size_t count = 0;
  for (int i = 0; i < 100; ++i) {
    const auto s = data::synth_sample(rng, cfg, Modality::A, 0);
    ad::Tensor base({1, 16, 16});
    for (std::size_t p = 0; p < base.size(); ++p)
      base[p] = data::class_intensity(static_cast<std::size_t>(s.mask.cells[p]), cfg.num_classes);
    const auto a = data::modality_transform(base, Modality::A, rng, cfg);
    const auto b = data::modality_transform(base, Modality::B, rng, cfg);
    for (std::size_t p = 0; p < a.size(); ++p) total += std::abs(a[p] - b[p]);
    count += a.size();
  }
  CHECK(total / static_cast<double>(count) > 0.2);
}

TEST_CASE("a linear probe separates the modalities") {
  data::DataConfig cfg;
  SeedStream rng(6);
  auto draw = [&](int n) {
    std::vector<std::pair<std::vector<double>, int>> out;
    for (int i = 0; i < n; ++i) {
      const Modality m = i % 2 ? Modality::B : Modality::A;
      const auto s = data::synth_sample(rng, cfg, m, 0);
      out.emplace_back(s.image.values(), m == Modality::B ? 1 : 0);
    }
    return out;
  };
  const auto train = draw(200), test = draw(200);
  const std::size_t d = train[0].first.size();
  std::vector<double> w(d, 0.0);
  double b = 0;
  for (int epoch = 0; epoch < 50; ++epoch) {
    std::vector<double> gw(d, 0.0);
    double gb = 0;
    for (const auto& [x, y] : train) {
      double z = b;
      for (std::size_t j = 0; j < d; ++j) z += w[j] * x[j];
      const double err = 1.0 / (1.0 + std::exp(-z)) - y;
      for (std::size_t j = 0; j < d; ++j) gw[j] += err * x[j];
      gb += err;
    }
    for (std::size_t j = 0; j < d; ++j) w[j] -= 0.1 * gw[j] / 200;
    b -= 0.1 * gb / 200;
  }
  int correct = 0;
  for (const auto& [x, y] : test) {
    double z = b;
    for (std::size_t j = 0; j < d; ++j) z += w[j] * x[j];
    correct += (z > 0) == (y == 1);
  }
  CHECK(correct / 200.0 > 0.95);
}

TEST_CASE("default split sizes and modalities") {
  data::DataConfig cfg;
  SeedStream rng(7);
  const auto split = data::make_split(rng, cfg);
  REQUIRE(split.client_datasets.size() == 2);
  CHECK(split.client_datasets[0].size() == 40);
  CHECK(split.client_datasets[1].size() == 40);
  CHECK(split.global_test.size() == 20);
  CHECK(split.client_modalities == std::vector<Modality>{Modality::A, Modality::B});
  for (const auto& s : split.client_datasets[0]) CHECK(s.modality == Modality::A);
  for (const auto& s : split.client_datasets[1]) CHECK(s.modality == Modality::B);
  std::size_t a = 0;
  for (const auto& s : split.global_test) a += s.modality == Modality::A;
  CHECK(a == 10);
}

TEST_CASE("three clients alternate modalities and share the A pool") {
  data::DataConfig cfg;
  cfg.num_clients = 3;
  SeedStream rng(8);
  const auto split = data::make_split(rng, cfg);
  CHECK(split.client_modalities == std::vector<Modality>{Modality::A, Modality::B, Modality::A});
  CHECK(split.client_datasets[0].size() == 20);
  CHECK(split.client_datasets[1].size() == 40);
  CHECK(split.client_datasets[2].size() == 20);
}

TEST_CASE("patients are never shared across clients or with the test set") {
  for (std::uint64_t seed = 0; seed < 100; ++seed) {
    data::DataConfig cfg;
    cfg.num_clients = 2 + seed % 3;
    cfg.patients_per_modality = 30;
    cfg.train_parts = 2;
    SeedStream rng(seed);
    const auto split = data::make_split(rng, cfg);
    std::set<std::uint32_t> seen;
    std::size_t total = 0;
    for (const auto& ds : split.client_datasets)
      for (const auto& s : ds) {
        seen.insert(s.patient_id);
        ++total;
      }
    for (const auto& s : split.global_test) {
      seen.insert(s.patient_id);
      ++total;
    }
    CHECK(seen.size() == total);
  }
}

TEST_CASE("split is a pure function of seed and config") {
  data::DataConfig cfg;
  SeedStream a(9), b(9), c(10);
  const auto s1 = data::make_split(a, cfg);
  CHECK(s1 == data::make_split(b, cfg));
  CHECK(!(s1 == data::make_split(c, cfg)));
}

TEST_CASE("config validation") {
  data::DataConfig cfg;
  cfg.patients_per_modality = 51;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.patients_per_modality = 5;
  cfg.num_clients = 3;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
  cfg = {};
  cfg.num_clients = 0;
  CHECK_THROWS_AS(cfg.validate(), std::invalid_argument);
}

TEST_CASE("dataset file round trip and size") {
  data::DataConfig cfg;
  SeedStream rng(11);
  const auto split = data::make_split(rng, cfg);
  const auto path = temp_file("roundtrip.fdas");
  data::write_split(split, cfg.image_size, cfg.num_classes, path);
  const std::size_t n = 100;
  CHECK(std::filesystem::file_size(path) == data::kDatasetHeaderBytes + n * (1 + 4 + 16 * 16 * 4 + 16 * 16));
  CHECK(std::filesystem::file_size(path) == data::dataset_file_size(16, n));
  CHECK(data::read_split(path, data::SplitLayout::of(split)) == split);

  data::SplitLayout wrong = data::SplitLayout::of(split);
  wrong.test_size += 1;
  try {
    data::read_split(path, wrong);
    FAIL("layout mismatch accepted");
  } catch (const data::DatasetFormatError& e) {
    CHECK(e.kind == data::FormatErrorKind::LayoutMismatch);
  }
}

TEST_CASE("corrupted dataset files are rejected") {
  data::DataConfig cfg;
  SeedStream rng(12);
  const auto split = data::make_split(rng, cfg);
  auto bytes = data::encode_samples(split.global_test, 16, 3);
  CHECK(data::decode_samples(bytes) == split.global_test);

  auto expect_kind = [](std::vector<std::uint8_t> b, data::FormatErrorKind kind) {
    try {
      data::decode_samples(b);
      FAIL("accepted corrupted bytes");
    } catch (const data::DatasetFormatError& e) {
      CHECK(e.kind == kind);
    }
  };
  auto bad_magic = bytes;
  bad_magic[0] = 'X';
  expect_kind(bad_magic, data::FormatErrorKind::BadMagic);
  auto bad_version = bytes;
  bad_version[4] = 9;
  expect_kind(bad_version, data::FormatErrorKind::BadVersion);
  auto truncated = bytes;
  truncated.resize(truncated.size() - 3);
  expect_kind(truncated, data::FormatErrorKind::Truncated);

  try {
    data::read_split(temp_file("does_not_exist.fdas"), data::SplitLayout::of(split));
    FAIL("missing file accepted");
  } catch (const data::DatasetFormatError& e) {
    CHECK(e.kind == data::FormatErrorKind::Io);
    CHECK(std::string(e.what()).find("does_not_exist") != std::string::npos);
  }
}
