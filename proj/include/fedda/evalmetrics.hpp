#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

#include "fedda/grid.hpp"
#include "fedda/segnet.hpp"
#include "fedda/synthdata.hpp"

namespace fedda::metrics {

/// 2|P∩T| / (|P|+|T|); 1.0 when both masks are empty.
double dice(const BoolGrid& pred, const BoolGrid& truth);

/// Foreground pixels with a 4-neighbour outside the mask or lying on the image border.
BoolGrid boundary(const BoolGrid& mask);

/// Symmetric 95th-percentile boundary distance.
///
/// Both directed nearest-boundary distance multisets are pooled and the
/// nearest-rank 95th percentile of the union is returned. 0 when both masks are
/// empty; the grid diagonal when exactly one is.
double hd95(const BoolGrid& pred, const BoolGrid& truth);

/// Length of the grid diagonal, the HD95 value when exactly one mask is empty.
double hd95_sentinel(std::size_t rows, std::size_t cols);

struct ClassMetrics {
  // Indexed by foreground class 1..C-1 at position k-1.
  std::vector<double> dice;
  std::vector<double> hd95;
  std::vector<std::size_t> hd95_sentinels;
  double mean_dice = 0.0;
  double mean_hd95 = 0.0;

  bool operator==(const ClassMetrics&) const = default;
};

BoolGrid class_mask(const IntGrid& labels, int cls);
/// Per-pixel argmax over the class axis of [C,H,W] logits; ties go to the lower class.
IntGrid argmax_classes(const ad::Tensor& logits);

/// Macro average over samples per class, then mean over foreground classes.
ClassMetrics evaluate_predictions(std::span<const IntGrid> predictions, std::span<const IntGrid> truths,
                                  std::size_t num_classes);

using Predictor = std::function<IntGrid(const data::Sample&)>;

ClassMetrics evaluate_global(const Predictor& predict, std::span<const data::Sample> test, std::size_t num_classes);
ClassMetrics evaluate_global(const seg::ParamSet& params, std::span<const data::Sample> test);

}  // namespace fedda::metrics
