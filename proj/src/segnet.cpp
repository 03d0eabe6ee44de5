#include "fedda/segnet.hpp"

#include <cmath>
#include <set>
#include <stdexcept>

namespace fedda::seg {

void ModelConfig::validate() const {
  if (image_size < 8) throw std::invalid_argument("image_size must be >= 8, got " + std::to_string(image_size));
  if (in_channels < 1) throw std::invalid_argument("in_channels must be >= 1");
  if (feat_channels < 2)
    throw std::invalid_argument("feat_channels must be >= 2, got " + std::to_string(feat_channels));
  if (num_classes < 2) throw std::invalid_argument("num_classes must be >= 2, got " + std::to_string(num_classes));
  if (image_size > 65535) throw std::invalid_argument("image_size must fit in 16 bits");
  if (num_classes > 255) throw std::invalid_argument("num_classes must fit in 8 bits");
}

TensorList& ParamSet::group(Group g) {
  switch (g) {
    case Group::Backbone: return backbone;
    case Group::Decoder: return decoder;
    case Group::Discriminator: return discriminator;
  }
  throw std::logic_error("unknown group");
}

const TensorList& ParamSet::group(Group g) const { return const_cast<ParamSet*>(this)->group(g); }

TensorList ParamSet::segmentation() const {
  TensorList out = backbone;
  out.insert(out.end(), decoder.begin(), decoder.end());
  return out;
}

void ParamSet::set_segmentation(const TensorList& seg) {
  if (seg.size() != backbone.size() + decoder.size())
    throw std::invalid_argument("segmentation list has " + std::to_string(seg.size()) + " entries, expected " +
                                std::to_string(backbone.size() + decoder.size()));
  for (std::size_t i = 0; i < seg.size(); ++i) {
    NamedTensor& dst = i < backbone.size() ? backbone[i] : decoder[i - backbone.size()];
    if (dst.name != seg[i].name || dst.value.shape() != seg[i].value.shape())
      throw std::invalid_argument("segmentation entry '" + seg[i].name + "' does not match '" + dst.name + "'");
    dst.value = seg[i].value;
  }
}

std::vector<ad::Tensor*> ParamSet::tensors(Group g) {
  std::vector<ad::Tensor*> out;
  for (auto& nt : group(g)) out.push_back(&nt.value);
  return out;
}

std::vector<ad::Tensor*> ParamSet::segmentation_tensors() {
  auto out = tensors(Group::Backbone);
  auto dec = tensors(Group::Decoder);
  out.insert(out.end(), dec.begin(), dec.end());
  return out;
}

std::size_t ParamSet::parameter_count(Group g) const { return count_values(group(g)); }

std::size_t count_values(const TensorList& list) {
  std::size_t n = 0;
  for (const auto& nt : list) n += nt.value.size();
  return n;
}

std::vector<double> flatten(const TensorList& list) {
  std::vector<double> flat;
  flat.reserve(count_values(list));
  for (const auto& nt : list) flat.insert(flat.end(), nt.value.data().begin(), nt.value.data().end());
  return flat;
}

TensorList unflatten(const TensorList& like, std::span<const double> flat) {
  if (flat.size() != count_values(like))
    throw std::invalid_argument("unflatten: " + std::to_string(flat.size()) + " values for " +
                                std::to_string(count_values(like)) + " slots");
  TensorList out = like;
  std::size_t pos = 0;
  for (auto& nt : out)
    for (double& v : nt.value.data()) v = flat[pos++];
  return out;
}

namespace {

ad::Tensor he_uniform(const ad::Shape& shape, std::size_t fan_in, SeedStream& rng) {
  ad::Tensor t(shape);
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  for (double& v : t.data()) v = rng.uniform(-bound, bound);
  return t;
}

NamedTensor conv_weight(std::string name, std::size_t cout, std::size_t cin, SeedStream& rng) {
  return {std::move(name), he_uniform({cout, cin, 3, 3}, cin * 9, rng)};
}

NamedTensor zeros(std::string name, std::size_t n) { return {std::move(name), ad::Tensor({n})}; }

void check_names_disjoint(const ParamSet& p) {
  std::set<std::string> seen;
  for (Group g : {Group::Backbone, Group::Decoder, Group::Discriminator})
    for (const auto& nt : p.group(g))
      if (!seen.insert(nt.name).second) throw std::logic_error("duplicate parameter name " + nt.name);
}

}  // namespace

ParamSet build_model(const ModelConfig& cfg, SeedStream& rng) {
  cfg.validate();
  const std::size_t c1 = cfg.in_channels, cf = cfg.feat_channels, nc = cfg.num_classes;
  ParamSet p;
  p.config = cfg;
  p.backbone.push_back(conv_weight("backbone.conv1.weight", cf, c1, rng));
  p.backbone.push_back(zeros("backbone.conv1.bias", cf));
  p.backbone.push_back(conv_weight("backbone.conv2.weight", cf, cf, rng));
  p.backbone.push_back(zeros("backbone.conv2.bias", cf));
  p.decoder.push_back(conv_weight("decoder.conv.weight", nc, cf, rng));
  p.decoder.push_back(zeros("decoder.conv.bias", nc));
  p.discriminator.push_back(conv_weight("discriminator.conv.weight", kDiscriminatorHidden, cf, rng));
  p.discriminator.push_back(zeros("discriminator.conv.bias", kDiscriminatorHidden));
  p.discriminator.push_back(
      {"discriminator.fc.weight", he_uniform({1, kDiscriminatorHidden}, kDiscriminatorHidden, rng)});
  p.discriminator.push_back(zeros("discriminator.fc.bias", 1));
  check_names_disjoint(p);
  return p;
}

ModelGraph::ModelGraph(ad::Tape& tape, const ParamSet& params, bool segmentation_grad, bool discriminator_grad)
    : tape_(tape), cfg_(params.config) {
  for (const auto& nt : params.backbone) backbone_.push_back(tape.leaf(nt.value, segmentation_grad));
  for (const auto& nt : params.decoder) decoder_.push_back(tape.leaf(nt.value, segmentation_grad));
  for (const auto& nt : params.discriminator) discriminator_.push_back(tape.leaf(nt.value, discriminator_grad));
}

ad::Var ModelGraph::features(ad::Var image) const {
  if (image.value().shape() != cfg_.image_shape())
    throw ad::ShapeError("image shape " + ad::shape_string(image.value().shape()) + " does not match model " +
                         ad::shape_string(cfg_.image_shape()));
  ad::Var h = ad::relu(ad::conv2d(image, backbone_[0], backbone_[1]));
  return ad::relu(ad::conv2d(h, backbone_[2], backbone_[3]));
}

ad::Var ModelGraph::decode(ad::Var features) const {
  if (features.value().shape() != cfg_.feature_shape())
    throw ad::ShapeError("feature shape " + ad::shape_string(features.value().shape()) + " does not match model " +
                         ad::shape_string(cfg_.feature_shape()));
  return ad::conv2d(features, decoder_[0], decoder_[1]);
}

ad::Var ModelGraph::discriminate(ad::Var features) const {
  if (features.value().shape() != cfg_.feature_shape())
    throw ad::ShapeError("feature shape " + ad::shape_string(features.value().shape()) + " does not match model " +
                         ad::shape_string(cfg_.feature_shape()));
  ad::Var h = ad::relu(ad::conv2d(features, discriminator_[0], discriminator_[1]));
  return ad::dense(ad::global_avg_pool(h), discriminator_[2], discriminator_[3]);
}

const std::vector<ad::Var>& ModelGraph::leaves(Group g) const {
  switch (g) {
    case Group::Backbone: return backbone_;
    case Group::Decoder: return decoder_;
    case Group::Discriminator: return discriminator_;
  }
  throw std::logic_error("unknown group");
}

std::vector<std::vector<double>> ModelGraph::gradients(Group g) const {
  std::vector<std::vector<double>> out;
  for (const ad::Var& v : leaves(g)) {
    auto gr = v.grad();
    if (gr.empty())
      out.emplace_back(v.value().size(), 0.0);
    else
      out.emplace_back(gr.begin(), gr.end());
  }
  return out;
}

ad::Tensor extract_features(const ParamSet& params, const ad::Tensor& image) {
  ad::Tape tape;
  ModelGraph g(tape, params, false, false);
  return g.features(tape.constant(image)).value();
}

ad::Tensor segment(const ParamSet& params, const ad::Tensor& image) {
  ad::Tape tape;
  ModelGraph g(tape, params, false, false);
  return g.logits(tape.constant(image)).value();
}

double discriminate(const ParamSet& params, const ad::Tensor& features) {
  ad::Tape tape;
  ModelGraph g(tape, params, false, false);
  return g.discriminate(tape.constant(features)).value().item();
}

std::vector<std::uint8_t> serialize(const TensorList& list) {
  ByteWriter w;
  w.u32(static_cast<std::uint32_t>(list.size()));
  for (const auto& nt : list) {
    w.u32(static_cast<std::uint32_t>(nt.name.size()));
    w.str(nt.name);
    w.u32(static_cast<std::uint32_t>(nt.value.rank()));
    for (std::size_t d : nt.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (double v : nt.value.data()) w.f64(v);
  }
  return w.take();
}

TensorList deserialize(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  TensorList out = read_tensor_list(r);
  if (r.remaining() != 0) throw std::invalid_argument("trailing bytes after parameter list");
  return out;
}

TensorList read_tensor_list(ByteReader& r) {
  TensorList out;
  const std::uint32_t n = r.u32();
  for (std::uint32_t i = 0; i < n; ++i) {
    NamedTensor nt;
    nt.name = r.str(r.u32());
    const std::uint32_t rank = r.u32();
    ad::Shape shape(rank);
    for (auto& d : shape) d = r.u32();
    std::vector<double> data(ad::shape_size(shape));
    for (double& v : data) v = r.f64();
    nt.value = ad::Tensor(std::move(shape), std::move(data));
    out.push_back(std::move(nt));
  }
  return out;
}

std::size_t serialized_size(const TensorList& list) {
  std::size_t n = 4;
  for (const auto& nt : list) n += 4 + nt.name.size() + 4 + 4 * nt.value.rank() + 8 * nt.value.size();
  return n;
}

std::vector<std::uint8_t> serialize_feature(const FeatureMap& fm) {
  ByteWriter w;
  for (double v : fm.data.data()) w.f64(v);
  return w.take();
}

FeatureMap read_feature(ByteReader& reader, const ModelConfig& cfg, int client_id, int round) {
  FeatureMap fm;
  fm.data = ad::Tensor(cfg.feature_shape());
  for (double& v : fm.data.data()) v = reader.f64();
  fm.client_id = client_id;
  fm.round = round;
  return fm;
}

}  // namespace fedda::seg
