#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedda/autodiff.hpp"
#include "fedda/rng.hpp"
#include "fedda/segnet.hpp"
#include "fedda/synthdata.hpp"

// Client-local training with feature-level adversarial alignment.
//
// Per batch the discriminator takes one step on L_D (source features -> 0,
// target features -> 1), then the backbone and decoder take one step on
//
//   CE(segment(x), y) + adv_weight * BCE(D(B(x)), 1)
//
// i.e. the non-saturating form of the backbone's side of the min-max game.
// The two steps update disjoint parameter groups.

namespace fedda::train {

enum class Mode { Plain, Cyclic, Joint, FedProx };

const char* mode_name(Mode m);

struct LocalTrainConfig {
  double lr_backbone = 1e-3;
  double lr_discriminator = 1e-6;
  double adv_weight = 0.1;
  std::size_t local_epochs = 1;
  std::size_t batch_size = 4;
  double weight_decay = 1e-5;
  double disc_weight_decay = 1e-5;
  double fedprox_mu = 0.01;
  Mode mode = Mode::Plain;

  void validate() const;
  ad::AdamConfig segmentation_adam() const { return {lr_backbone, 0.9, 0.999, 1e-8, weight_decay}; }
  ad::AdamConfig discriminator_adam() const { return {lr_discriminator, 0.9, 0.999, 1e-8, disc_weight_decay}; }

  bool operator==(const LocalTrainConfig&) const = default;
};

/// Parameters plus the two optimizers that own them.
struct LocalModel {
  seg::ParamSet params;
  ad::AdamState seg_opt;
  ad::AdamState disc_opt;

  bool operator==(const LocalModel&) const = default;
};

LocalModel make_local_model(seg::ParamSet params, const LocalTrainConfig& cfg);

struct RoundInputs {
  /// Round-start copy of the broadcast model (joint targets, proximal reference).
  const seg::ParamSet* global_snapshot = nullptr;
  /// Cyclic-mode targets delivered this round (may be empty).
  std::vector<ad::Tensor> targets;
  SeedStream data_rng{0};
  SeedStream disc_rng{0};
};

struct LossSummary {
  double seg_loss = 0.0;
  double adv_loss = 0.0;
  double disc_loss = 0.0;
  std::size_t batches = 0;
};

using Batch = std::span<const data::Sample* const>;

/// Frozen-snapshot backbone features of the batch, detached.
std::vector<ad::Tensor> acquire_targets_joint(const seg::ParamSet& global_snapshot, Batch batch);

/// Validates delivered bank features against the model shape and returns them as the round's target set.
std::vector<ad::Tensor> acquire_targets_cyclic(std::span<const seg::FeatureMap> delivered, const seg::ModelConfig& cfg);

/// One Adam step of the discriminator on L_D. Returns L_D before the step, or 0
/// (step skipped) when either list is empty.
double discriminator_step(LocalModel& model, std::span<const ad::Tensor> source, std::span<const ad::Tensor> target);

struct StepLosses {
  double seg_loss = 0.0;
  double adv_loss = 0.0;
};

struct BackboneObjective {
  /// Adversarial term weight; 0 or `adversarial == false` drops the term entirely.
  double adv_weight = 0.0;
  bool adversarial = false;
  /// Non-null adds the proximal term against this model's segmentation group.
  const seg::ParamSet* proximal_reference = nullptr;
  double mu = 0.0;
};

/// Value of the combined backbone objective (no update). Used by gradient checks.
ad::Var backbone_objective(ad::Tape& tape, const seg::ModelGraph& graph, Batch batch, const BackboneObjective& obj,
                           StepLosses* parts = nullptr);

/// One Adam step of backbone+decoder on the combined objective.
StepLosses backbone_adversarial_step(LocalModel& model, Batch batch, const BackboneObjective& obj);

/// One round of local training: local_epochs passes over shuffled batches.
LossSummary local_train(LocalModel& model, std::span<const data::Sample> dataset, RoundInputs& inputs,
                        const LocalTrainConfig& cfg);

}  // namespace fedda::train
