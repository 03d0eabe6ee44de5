#include "fedda/synthdata.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>

#include "fedda/bytes.hpp"

namespace fedda::data {

const char* modality_name(Modality m) { return m == Modality::A ? "A" : "B"; }

void DataConfig::validate() const {
  if (image_size < 8) throw std::invalid_argument("image_size must be >= 8");
  if (image_size > 65535) throw std::invalid_argument("image_size must fit in 16 bits");
  if (num_classes < 2 || num_classes > 255) throw std::invalid_argument("num_classes must be in [2,255]");
  if (num_clients < 1) throw std::invalid_argument("num_clients must be >= 1");
  if (train_parts == 0 || test_parts == 0) throw std::invalid_argument("train/test ratio parts must be positive");
  if (patients_per_modality % (train_parts + test_parts) != 0)
    throw std::invalid_argument("patients_per_modality (" + std::to_string(patients_per_modality) +
                                ") is not divisible by the train:test ratio " + std::to_string(train_parts) + ":" +
                                std::to_string(test_parts));
  if (noise_a < 0 || noise_b < 0) throw std::invalid_argument("noise levels must be >= 0");
  if (!(min_radius > 0 && min_radius <= max_radius && max_radius <= 0.5))
    throw std::invalid_argument("radius fractions must satisfy 0 < min <= max <= 0.5");
  if (min_radius * static_cast<double>(image_size) < 1.0)
    throw std::invalid_argument("min_radius too small to guarantee a foreground pixel");
  // Each client's share of its modality must hold at least 4 samples.
  const std::size_t per_a = (num_clients + 1) / 2;
  if (train_per_modality() / per_a < 4)
    throw std::invalid_argument("fewer than 4 training samples per client; raise patients_per_modality");
}

std::size_t DataConfig::train_per_modality() const {
  return patients_per_modality / (train_parts + test_parts) * train_parts;
}

double class_intensity(std::size_t k, std::size_t num_classes) {
  if (k == 0) return 0.1;
  if (0.3 * static_cast<double>(num_classes - 1) <= 1.0 + 1e-12) return 0.3 * static_cast<double>(k);
  return 0.1 + 0.9 * static_cast<double>(k) / static_cast<double>(num_classes - 1);
}

Modality client_modality(std::size_t client_id) { return client_id % 2 == 1 ? Modality::A : Modality::B; }

namespace {

double quantize(double x) { return static_cast<double>(static_cast<float>(std::clamp(x, 0.0, 1.0))); }

}  // namespace

Sample synth_sample(SeedStream& rng, const DataConfig& cfg, Modality modality, std::uint32_t patient_id) {
  const std::size_t n = cfg.image_size;
  const double size = static_cast<double>(n);
  Sample s;
  s.modality = modality;
  s.patient_id = patient_id;
  s.mask = IntGrid(n, n, 0);
  for (std::size_t k = 1; k < cfg.num_classes; ++k) {
    const double cy = rng.uniform(0.2, 0.8) * size;
    const double cx = rng.uniform(0.2, 0.8) * size;
    const double ry = rng.uniform(cfg.min_radius, cfg.max_radius) * size;
    const double rx = rng.uniform(cfg.min_radius, cfg.max_radius) * size;
    for (std::size_t r = 0; r < n; ++r) {
      for (std::size_t c = 0; c < n; ++c) {
        const double dy = (static_cast<double>(r) + 0.5 - cy) / ry;
        const double dx = (static_cast<double>(c) + 0.5 - cx) / rx;
        if (dy * dy + dx * dx <= 1.0) s.mask.at(r, c) = static_cast<int>(k);
      }
    }
  }
  ad::Tensor base({1, n, n});
  for (std::size_t i = 0; i < n * n; ++i)
    base[i] = class_intensity(static_cast<std::size_t>(s.mask.cells[i]), cfg.num_classes);
  s.image = modality_transform(base, modality, rng, cfg);
  return s;
}

ad::Tensor modality_transform(const ad::Tensor& base, Modality modality, SeedStream& rng, const DataConfig& cfg) {
  if (base.rank() != 3 || base.dim(0) != 1)
    throw ad::ShapeError("modality_transform expects [1,H,W], got " + ad::shape_string(base.shape()));
  const std::size_t h = base.dim(1), w = base.dim(2);
  ad::Tensor out(base.shape());
  if (modality == Modality::A) {
    for (std::size_t i = 0; i < base.size(); ++i) {
      const double noise = cfg.noise_a > 0 ? cfg.noise_a * rng.normal() : 0.0;
      out[i] = quantize(base[i] + noise);
    }
    return out;
  }
  for (std::size_t r = 0; r < h; ++r) {
    for (std::size_t c = 0; c < w; ++c) {
      double acc = 0.0;
      int count = 0;
      for (int dr = -1; dr <= 1; ++dr) {
        for (int dc = -1; dc <= 1; ++dc) {
          const auto rr = static_cast<std::ptrdiff_t>(r) + dr;
          const auto cc = static_cast<std::ptrdiff_t>(c) + dc;
          if (rr < 0 || cc < 0 || rr >= static_cast<std::ptrdiff_t>(h) || cc >= static_cast<std::ptrdiff_t>(w))
            continue;
          acc += 1.0 - base[static_cast<std::size_t>(rr) * w + static_cast<std::size_t>(cc)];
          ++count;
        }
      }
      const double noise = cfg.noise_b > 0 ? cfg.noise_b * rng.normal() : 0.0;
      out[r * w + c] = quantize(acc / count + noise);
    }
  }
  return out;
}

FederatedSplit make_split(SeedStream& rng, const DataConfig& cfg) {
  cfg.validate();
  const std::size_t train_n = cfg.train_per_modality();
  FederatedSplit split;
  std::uint32_t next_patient = 0;
  std::vector<Sample> train[2];
  std::vector<Sample> test[2];
  for (Modality m : {Modality::A, Modality::B}) {
    const auto mi = static_cast<std::size_t>(m);
    for (std::size_t i = 0; i < cfg.patients_per_modality; ++i) {
      Sample s = synth_sample(rng, cfg, m, next_patient++);
      (i < train_n ? train[mi] : test[mi]).push_back(std::move(s));
    }
  }

  // Clients sharing a modality split its training pool into equal contiguous shares.
  std::vector<std::size_t> holders[2];
  for (std::size_t id = 1; id <= cfg.num_clients; ++id)
    holders[static_cast<std::size_t>(client_modality(id))].push_back(id);
  split.client_datasets.resize(cfg.num_clients);
  split.client_modalities.resize(cfg.num_clients);
  for (std::size_t mi = 0; mi < 2; ++mi) {
    const std::size_t k = holders[mi].size();
    if (k == 0) continue;
    const std::size_t base = train[mi].size() / k, extra = train[mi].size() % k;
    std::size_t pos = 0;
    for (std::size_t j = 0; j < k; ++j) {
      const std::size_t take = base + (j < extra ? 1 : 0);
      const std::size_t idx = holders[mi][j] - 1;
      split.client_datasets[idx].assign(std::make_move_iterator(train[mi].begin() + static_cast<std::ptrdiff_t>(pos)),
                                        std::make_move_iterator(train[mi].begin() +
                                                                static_cast<std::ptrdiff_t>(pos + take)));
      split.client_modalities[idx] = static_cast<Modality>(mi);
      pos += take;
    }
  }
  for (std::size_t mi = 0; mi < 2; ++mi)
    split.global_test.insert(split.global_test.end(), test[mi].begin(), test[mi].end());
  return split;
}

SplitLayout SplitLayout::of(const FederatedSplit& split) {
  SplitLayout l;
  for (const auto& d : split.client_datasets) l.client_sizes.push_back(d.size());
  l.test_size = split.global_test.size();
  return l;
}

std::size_t SplitLayout::total() const {
  std::size_t n = test_size;
  for (std::size_t s : client_sizes) n += s;
  return n;
}

std::size_t dataset_file_size(std::size_t image_size, std::size_t sample_count) {
  const std::size_t px = image_size * image_size;
  return kDatasetHeaderBytes + sample_count * (1 + 4 + 4 * px + px);
}

std::vector<std::uint8_t> encode_samples(std::span<const Sample> samples, std::size_t image_size,
                                         std::size_t num_classes) {
  ByteWriter w;
  w.str("FDAS");
  w.u8(kDatasetVersion);
  w.u16(static_cast<std::uint16_t>(image_size));
  w.u8(static_cast<std::uint8_t>(num_classes));
  w.u32(static_cast<std::uint32_t>(samples.size()));
  const std::size_t px = image_size * image_size;
  for (const Sample& s : samples) {
    if (s.image.size() != px || s.mask.size() != px)
      throw DatasetFormatError(FormatErrorKind::BadValue, "sample " + std::to_string(s.patient_id) +
                                                              " does not match image size " +
                                                              std::to_string(image_size));
    w.u8(static_cast<std::uint8_t>(s.modality));
    w.u32(s.patient_id);
    for (double v : s.image.data()) w.f32(static_cast<float>(v));
    for (int c : s.mask.cells) w.u8(static_cast<std::uint8_t>(c));
  }
  return w.take();
}

std::vector<Sample> decode_samples(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  try {
    if (r.str(4) != "FDAS") throw DatasetFormatError(FormatErrorKind::BadMagic, "not an FDAS dataset (bad magic)");
    const std::uint8_t version = r.u8();
    if (version != kDatasetVersion)
      throw DatasetFormatError(FormatErrorKind::BadVersion,
                               "unsupported FDAS version " + std::to_string(version));
    const std::size_t n = r.u16();
    const std::size_t classes = r.u8();
    const std::uint32_t count = r.u32();
    if (r.remaining() != dataset_file_size(n, count) - kDatasetHeaderBytes)
      throw DatasetFormatError(FormatErrorKind::Truncated,
                               "payload is " + std::to_string(r.remaining()) + " bytes, header implies " +
                                   std::to_string(dataset_file_size(n, count) - kDatasetHeaderBytes));
    std::vector<Sample> out;
    out.reserve(count);
    for (std::uint32_t i = 0; i < count; ++i) {
      Sample s;
      const std::uint8_t m = r.u8();
      if (m > 1) throw DatasetFormatError(FormatErrorKind::BadValue, "invalid modality byte " + std::to_string(m));
      s.modality = static_cast<Modality>(m);
      s.patient_id = r.u32();
      s.image = ad::Tensor({1, n, n});
      for (double& v : s.image.data()) v = static_cast<double>(r.f32());
      s.mask = IntGrid(n, n, 0);
      for (int& c : s.mask.cells) {
        c = r.u8();
        if (static_cast<std::size_t>(c) >= classes)
          throw DatasetFormatError(FormatErrorKind::BadValue, "mask class " + std::to_string(c) + " out of range");
      }
      out.push_back(std::move(s));
    }
    return out;
  } catch (const TruncatedInput& e) {
    throw DatasetFormatError(FormatErrorKind::Truncated, std::string("truncated FDAS data: ") + e.what());
  }
}

void write_split(const FederatedSplit& split, std::size_t image_size, std::size_t num_classes,
                 const std::filesystem::path& path) {
  std::vector<Sample> flat;
  for (const auto& d : split.client_datasets) flat.insert(flat.end(), d.begin(), d.end());
  flat.insert(flat.end(), split.global_test.begin(), split.global_test.end());
  const auto bytes = encode_samples(flat, image_size, num_classes);
  std::ofstream os(path, std::ios::binary | std::ios::trunc);
  if (!os) throw DatasetFormatError(FormatErrorKind::Io, "cannot open " + path.string() + " for writing");
  os.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!os) throw DatasetFormatError(FormatErrorKind::Io, "write failed: " + path.string());
}

FederatedSplit read_split(const std::filesystem::path& path, const SplitLayout& layout) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw DatasetFormatError(FormatErrorKind::Io, "cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
  std::vector<Sample> flat = decode_samples(bytes);
  if (flat.size() != layout.total())
    throw DatasetFormatError(FormatErrorKind::LayoutMismatch,
                             path.string() + " holds " + std::to_string(flat.size()) + " samples, layout expects " +
                                 std::to_string(layout.total()));
  FederatedSplit split;
  std::size_t pos = 0;
  for (std::size_t size : layout.client_sizes) {
    std::vector<Sample> d(flat.begin() + static_cast<std::ptrdiff_t>(pos),
                          flat.begin() + static_cast<std::ptrdiff_t>(pos + size));
    split.client_modalities.push_back(d.empty() ? Modality::A : d.front().modality);
    split.client_datasets.push_back(std::move(d));
    pos += size;
  }
  split.global_test.assign(flat.begin() + static_cast<std::ptrdiff_t>(pos), flat.end());
  return split;
}

}  // namespace fedda::data
