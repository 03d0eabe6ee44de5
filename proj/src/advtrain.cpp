#include "fedda/advtrain.hpp"

#include <algorithm>
#include <iterator>
#include <numeric>
#include <stdexcept>
#include <string>

#include "fedda/aggregators.hpp"

namespace fedda::train {

const char* mode_name(Mode m) {
  switch (m) {
    case Mode::Plain: return "plain";
    case Mode::Cyclic: return "cyclic";
    case Mode::Joint: return "joint";
    case Mode::FedProx: return "fedprox";
  }
  return "?";
}

void LocalTrainConfig::validate() const {
  if (!(lr_backbone > 0) || !(lr_discriminator > 0)) throw std::invalid_argument("learning rates must be > 0");
  if (!(adv_weight >= 0)) throw std::invalid_argument("adv_weight must be >= 0");
  if (local_epochs < 1) throw std::invalid_argument("local_epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
  if (!(weight_decay >= 0) || !(disc_weight_decay >= 0)) throw std::invalid_argument("weight decay must be >= 0");
  if (!(fedprox_mu >= 0)) throw std::invalid_argument("fedprox_mu must be >= 0");
}

LocalModel make_local_model(seg::ParamSet params, const LocalTrainConfig& cfg) {
  LocalModel m;
  m.params = std::move(params);
  m.seg_opt = ad::AdamState(cfg.segmentation_adam(), m.params.segmentation_tensors());
  m.disc_opt = ad::AdamState(cfg.discriminator_adam(), m.params.tensors(seg::Group::Discriminator));
  return m;
}

std::vector<ad::Tensor> acquire_targets_joint(const seg::ParamSet& global_snapshot, Batch batch) {
  std::vector<ad::Tensor> out;
  out.reserve(batch.size());
  for (const data::Sample* s : batch) out.push_back(seg::extract_features(global_snapshot, s->image));
  return out;
}

std::vector<ad::Tensor> acquire_targets_cyclic(std::span<const seg::FeatureMap> delivered,
                                               const seg::ModelConfig& cfg) {
  std::vector<ad::Tensor> out;
  out.reserve(delivered.size());
  for (const auto& fm : delivered) {
    if (fm.data.shape() != cfg.feature_shape())
      throw ad::ShapeError("delivered feature map from client " + std::to_string(fm.client_id) + " has shape " +
                           ad::shape_string(fm.data.shape()) + ", model expects " +
                           ad::shape_string(cfg.feature_shape()));
    out.push_back(fm.data);
  }
  return out;
}

double discriminator_step(LocalModel& model, std::span<const ad::Tensor> source, std::span<const ad::Tensor> target) {
  if (source.empty() || target.empty()) return 0.0;
  ad::Tape tape;
  seg::ModelGraph graph(tape, model.params, false, true);
  ad::Var total;
  auto accumulate = [&](ad::Var term) { total = total.valid() ? ad::add(total, term) : term; };
  for (const auto& f : source) accumulate(ad::binary_cross_entropy(graph.discriminate(tape.constant(f)), 0));
  for (const auto& f : target) accumulate(ad::binary_cross_entropy(graph.discriminate(tape.constant(f)), 1));
  ad::Var loss = ad::scale(total, 1.0 / static_cast<double>(source.size() + target.size()));
  tape.backward(loss);
  const auto grads = graph.gradients(seg::Group::Discriminator);
  const auto tensors = model.params.tensors(seg::Group::Discriminator);
  ad::adam_step(tensors, grads, model.disc_opt);
  return loss.value().item();
}

ad::Var backbone_objective(ad::Tape& tape, const seg::ModelGraph& graph, Batch batch, const BackboneObjective& obj,
                           StepLosses* parts) {
  if (batch.empty()) throw std::invalid_argument("backbone step on an empty batch");
  const double inv_n = 1.0 / static_cast<double>(batch.size());
  const bool adversarial = obj.adversarial && obj.adv_weight > 0.0;
  ad::Var ce_sum, adv_sum;
  for (const data::Sample* s : batch) {
    ad::Var feats = graph.features(tape.constant(s->image));
    ad::Var ce = ad::softmax_cross_entropy(graph.decode(feats), s->mask.cells);
    ce_sum = ce_sum.valid() ? ad::add(ce_sum, ce) : ce;
    if (adversarial) {
      ad::Var adv = ad::binary_cross_entropy(graph.discriminate(feats), 1);
      adv_sum = adv_sum.valid() ? ad::add(adv_sum, adv) : adv;
    }
  }
  ad::Var seg_loss = ad::scale(ce_sum, inv_n);
  ad::Var total = seg_loss;
  StepLosses losses;
  losses.seg_loss = seg_loss.value().item();
  if (adversarial) {
    ad::Var adv_loss = ad::scale(adv_sum, inv_n);
    losses.adv_loss = adv_loss.value().item();
    total = ad::add(total, ad::scale(adv_loss, obj.adv_weight));
  }
  if (obj.proximal_reference != nullptr && obj.mu > 0.0) {
    std::vector<ad::Var> local = graph.leaves(seg::Group::Backbone);
    const auto& dec = graph.leaves(seg::Group::Decoder);
    local.insert(local.end(), dec.begin(), dec.end());
    std::vector<ad::Tensor> ref;
    for (const auto& nt : obj.proximal_reference->segmentation()) ref.push_back(nt.value);
    total = ad::add(total, agg::proximal_term(local, ref, obj.mu));
  }
  if (parts) *parts = losses;
  return total;
}

StepLosses backbone_adversarial_step(LocalModel& model, Batch batch, const BackboneObjective& obj) {
  ad::Tape tape;
  seg::ModelGraph graph(tape, model.params, true, false);
  StepLosses losses;
  ad::Var total = backbone_objective(tape, graph, batch, obj, &losses);
  tape.backward(total);
  auto grads = graph.gradients(seg::Group::Backbone);
  auto dec = graph.gradients(seg::Group::Decoder);
  grads.insert(grads.end(), std::make_move_iterator(dec.begin()), std::make_move_iterator(dec.end()));
  const auto tensors = model.params.segmentation_tensors();
  ad::adam_step(tensors, grads, model.seg_opt);
  return losses;
}

LossSummary local_train(LocalModel& model, std::span<const data::Sample> dataset, RoundInputs& inputs,
                        const LocalTrainConfig& cfg) {
  if (dataset.empty()) throw std::invalid_argument("local_train: empty local dataset");
  cfg.validate();
  const bool needs_snapshot = cfg.mode == Mode::Joint || cfg.mode == Mode::FedProx;
  if (needs_snapshot && inputs.global_snapshot == nullptr)
    throw std::invalid_argument(std::string("local_train: ") + mode_name(cfg.mode) + " mode needs a global snapshot");

  std::vector<std::size_t> order(dataset.size());
  LossSummary summary;
  for (std::size_t epoch = 0; epoch < cfg.local_epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    inputs.data_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::vector<const data::Sample*> batch;
      for (std::size_t i = start; i < end; ++i) batch.push_back(&dataset[order[i]]);

      std::vector<ad::Tensor> targets;
      if (cfg.mode == Mode::Joint) {
        targets = acquire_targets_joint(*inputs.global_snapshot, batch);
      } else if (cfg.mode == Mode::Cyclic && !inputs.targets.empty()) {
        if (inputs.targets.size() <= batch.size()) {
          targets = inputs.targets;
        } else {
          std::vector<std::size_t> pick(inputs.targets.size());
          std::iota(pick.begin(), pick.end(), std::size_t{0});
          inputs.disc_rng.shuffle(pick);
          for (std::size_t i = 0; i < batch.size(); ++i) targets.push_back(inputs.targets[pick[i]]);
        }
      }

      BackboneObjective obj;
      if (!targets.empty()) {
        std::vector<ad::Tensor> source;
        source.reserve(batch.size());
        for (const data::Sample* s : batch) source.push_back(seg::extract_features(model.params, s->image));
        summary.disc_loss += discriminator_step(model, source, targets);
        obj.adversarial = true;
        obj.adv_weight = cfg.adv_weight;
      }
      if (cfg.mode == Mode::FedProx) {
        obj.proximal_reference = inputs.global_snapshot;
        obj.mu = cfg.fedprox_mu;
      }
      const StepLosses step = backbone_adversarial_step(model, batch, obj);
      summary.seg_loss += step.seg_loss;
      summary.adv_loss += step.adv_loss;
      ++summary.batches;
    }
  }
  const auto n = static_cast<double>(summary.batches);
  summary.seg_loss /= n;
  summary.adv_loss /= n;
  summary.disc_loss /= n;
  return summary;
}

}  // namespace fedda::train
