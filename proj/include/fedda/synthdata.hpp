#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "fedda/autodiff.hpp"
#include "fedda/grid.hpp"
#include "fedda/rng.hpp"

// Synthetic two-modality segmentation scenes.
//
// A scene is C-1 filled ellipses on a background; class k is painted with a
// fixed intensity level and later classes overwrite earlier ones. Modality A
// keeps the intensities, modality B inverts and blurs them. Each "patient" is
// one image.

namespace fedda::data {

enum class Modality : std::uint8_t { A = 0, B = 1 };

const char* modality_name(Modality m);

struct Sample {
  ad::Tensor image;  // [1,H,W], values in [0,1], float32-representable
  IntGrid mask;      // H x W, classes in [0,C)
  Modality modality = Modality::A;
  std::uint32_t patient_id = 0;

  bool operator==(const Sample&) const = default;
};

struct DataConfig {
  std::size_t image_size = 16;
  std::size_t num_classes = 3;
  std::size_t num_clients = 2;
  std::size_t patients_per_modality = 50;
  // train:test split per modality
  std::size_t train_parts = 4;
  std::size_t test_parts = 1;
  double noise_a = 0.05;
  double noise_b = 0.10;
  double min_radius = 0.15;  // fraction of image_size
  double max_radius = 0.35;

  void validate() const;
  std::size_t train_per_modality() const;
  std::size_t test_per_modality() const { return patients_per_modality - train_per_modality(); }

  bool operator==(const DataConfig&) const = default;
};

struct FederatedSplit {
  std::vector<std::vector<Sample>> client_datasets;
  std::vector<Modality> client_modalities;
  std::vector<Sample> global_test;

  bool operator==(const FederatedSplit&) const = default;
};

/// Intensity painted for class k (0 = background).
double class_intensity(std::size_t k, std::size_t num_classes);

/// Client modality under round-robin assignment: client 1 -> A, 2 -> B, 3 -> A, ...
Modality client_modality(std::size_t client_id);

Sample synth_sample(SeedStream& rng, const DataConfig& cfg, Modality modality, std::uint32_t patient_id);

/// A: base + N(0, noise_a). B: 3x3 mean blur of (1 - base) + N(0, noise_b).
/// The blur averages in-bounds neighbours only. Output clamped to [0,1].
ad::Tensor modality_transform(const ad::Tensor& base, Modality modality, SeedStream& rng, const DataConfig& cfg);

FederatedSplit make_split(SeedStream& rng, const DataConfig& cfg);

// ---- FDAS dataset file ------------------------------------------------------
//
//   "FDAS" | u8 version=1 | u16 H | u8 C | u32 count |
//   count x ( u8 modality | u32 patient_id | H*H f32 image | H*H u8 mask )
//
// All integers little-endian. A split is stored as its client datasets in
// client order followed by the global test set; SplitLayout says how to cut
// the flat sample list back into those pieces.

enum class FormatErrorKind { BadMagic, BadVersion, Truncated, LayoutMismatch, Io, BadValue };

struct DatasetFormatError : std::runtime_error {
  DatasetFormatError(FormatErrorKind kind, const std::string& what) : std::runtime_error(what), kind(kind) {}
  FormatErrorKind kind;
};

struct SplitLayout {
  std::vector<std::size_t> client_sizes;
  std::size_t test_size = 0;

  static SplitLayout of(const FederatedSplit& split);
  std::size_t total() const;
};

inline constexpr std::uint8_t kDatasetVersion = 1;
inline constexpr std::size_t kDatasetHeaderBytes = 4 + 1 + 2 + 1 + 4;

std::size_t dataset_file_size(std::size_t image_size, std::size_t sample_count);

std::vector<std::uint8_t> encode_samples(std::span<const Sample> samples, std::size_t image_size,
                                         std::size_t num_classes);
std::vector<Sample> decode_samples(std::span<const std::uint8_t> bytes);

void write_split(const FederatedSplit& split, std::size_t image_size, std::size_t num_classes,
                 const std::filesystem::path& path);
FederatedSplit read_split(const std::filesystem::path& path, const SplitLayout& layout);

}  // namespace fedda::data
