#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "fedda/autodiff.hpp"
#include "fedda/bytes.hpp"
#include "fedda/rng.hpp"

// Three-part segmentation model: backbone B, decoder H, discriminator D.
//
//   backbone       conv3x3(in -> C') + relu + conv3x3(C' -> C') + relu
//   decoder        conv3x3(C' -> C)
//   discriminator  conv3x3(C' -> 4) + relu + global average pool + dense(4 -> 1)
//
// Parameters are held in three disjoint named collections. Only the backbone
// and decoder (the segmentation group) ever cross the network.

namespace fedda::seg {

struct ModelConfig {
  std::size_t image_size = 16;
  std::size_t in_channels = 1;
  std::size_t feat_channels = 8;
  std::size_t num_classes = 3;

  /// Throws std::invalid_argument on out-of-range fields.
  void validate() const;
  ad::Shape image_shape() const { return {in_channels, image_size, image_size}; }
  ad::Shape feature_shape() const { return {feat_channels, image_size, image_size}; }

  bool operator==(const ModelConfig&) const = default;
};

inline constexpr std::size_t kDiscriminatorHidden = 4;

enum class Group { Backbone, Decoder, Discriminator };

struct NamedTensor {
  std::string name;
  ad::Tensor value;

  bool operator==(const NamedTensor&) const = default;
};

using TensorList = std::vector<NamedTensor>;

struct ParamSet {
  ModelConfig config;
  TensorList backbone;
  TensorList decoder;
  TensorList discriminator;

  TensorList& group(Group g);
  const TensorList& group(Group g) const;

  /// Backbone followed by decoder, copied.
  TensorList segmentation() const;
  /// Replaces backbone+decoder values; names and shapes must match.
  void set_segmentation(const TensorList& seg);

  std::vector<ad::Tensor*> tensors(Group g);
  std::vector<ad::Tensor*> segmentation_tensors();

  std::size_t parameter_count(Group g) const;

  bool operator==(const ParamSet&) const = default;
};

/// A detached feature activation [C',H,W] tagged with its producer.
struct FeatureMap {
  ad::Tensor data;
  int client_id = 0;
  int round = 0;

  bool operator==(const FeatureMap&) const = default;
};

std::size_t count_values(const TensorList& list);
std::vector<double> flatten(const TensorList& list);
/// Refills a copy of `like` from a flat vector of matching length.
TensorList unflatten(const TensorList& like, std::span<const double> flat);

/// He-uniform weights (bound sqrt(6 / fan_in)), zero biases.
ParamSet build_model(const ModelConfig& cfg, SeedStream& rng);

/// Binds a ParamSet onto a tape as leaves and builds the forward graph.
class ModelGraph {
 public:
  ModelGraph(ad::Tape& tape, const ParamSet& params, bool segmentation_grad, bool discriminator_grad);

  ad::Var features(ad::Var image) const;
  ad::Var decode(ad::Var features) const;
  ad::Var logits(ad::Var image) const { return decode(features(image)); }
  ad::Var discriminate(ad::Var features) const;

  /// Leaves in the same order as ParamSet::group(g).
  const std::vector<ad::Var>& leaves(Group g) const;
  /// Gradient copies for the leaves of `g`, ready for adam_step.
  std::vector<std::vector<double>> gradients(Group g) const;

 private:
  ad::Tape& tape_;
  ModelConfig cfg_;
  std::vector<ad::Var> backbone_;
  std::vector<ad::Var> decoder_;
  std::vector<ad::Var> discriminator_;
};

/// Backbone output without any gradient linkage.
ad::Tensor extract_features(const ParamSet& params, const ad::Tensor& image);
/// Decoder logits [C,H,W].
ad::Tensor segment(const ParamSet& params, const ad::Tensor& image);
/// Discriminator logit; sigmoid(logit) is the probability of "target".
double discriminate(const ParamSet& params, const ad::Tensor& features);

/// Length-prefixed wire format:
///   u32 entry count, then per entry
///   u32 name length, name bytes, u32 rank, rank x u32 dims, product(dims) x f64 (LE).
std::vector<std::uint8_t> serialize(const TensorList& list);
TensorList deserialize(std::span<const std::uint8_t> bytes);
/// Reads one parameter list from the cursor, leaving any following bytes unread.
TensorList read_tensor_list(ByteReader& reader);
std::size_t serialized_size(const TensorList& list);

/// Raw little-endian f64 payload, C'*H*W*8 bytes; shape comes from the model config.
std::vector<std::uint8_t> serialize_feature(const FeatureMap& fm);
FeatureMap read_feature(ByteReader& reader, const ModelConfig& cfg, int client_id, int round);

}  // namespace fedda::seg
