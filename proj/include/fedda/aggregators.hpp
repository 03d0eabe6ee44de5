#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedda/autodiff.hpp"

namespace fedda::agg {

struct AggregationInput {
  std::vector<std::vector<double>> updates;  // flattened segmentation vectors, client order
  std::vector<double> weights;               // w_k >= 0
  std::size_t krum_f = 1;
};

/// sum_k w_k theta_k / sum_k w_k, elementwise.
std::vector<double> fedavg_aggregate(const AggregationInput& input);

struct KrumSelection {
  std::size_t index = 0;  // 0-based position in input.updates
  std::vector<double> vector;
  std::vector<double> scores;
};

/// Krum: score(i) is the sum of squared distances to the K-f-2 nearest other
/// updates; the lowest score wins, ties going to the lowest index.
KrumSelection krum_select(const AggregationInput& input);

/// (mu/2) * sum over tensors of ||local - reference||^2, recorded on the tape.
ad::Var proximal_term(std::span<const ad::Var> local, std::span<const ad::Tensor> reference, double mu);

/// Same quantity on flat vectors (no tape).
double proximal_value(std::span<const double> local, std::span<const double> reference, double mu);

}  // namespace fedda::agg
