#include "fedda/aggregators.hpp"

#include <algorithm>
#include <numeric>
#include <stdexcept>
#include <string>

namespace fedda::agg {
namespace {

void check_updates(const AggregationInput& in) {
  if (in.updates.empty()) throw std::invalid_argument("aggregation: no client updates");
  const std::size_t n = in.updates.front().size();
  for (std::size_t k = 0; k < in.updates.size(); ++k)
    if (in.updates[k].size() != n)
      throw std::invalid_argument("aggregation: update " + std::to_string(k) + " has length " +
                                  std::to_string(in.updates[k].size()) + ", expected " + std::to_string(n));
}

double squared_l2(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    const double d = a[i] - b[i];
    s += d * d;
  }
  return s;
}

}  // namespace

std::vector<double> fedavg_aggregate(const AggregationInput& input) {
  check_updates(input);
  if (input.weights.size() != input.updates.size())
    throw std::invalid_argument("fedavg: " + std::to_string(input.weights.size()) + " weights for " +
                                std::to_string(input.updates.size()) + " updates");
  double total = 0.0;
  for (double w : input.weights) {
    if (w < 0) throw std::invalid_argument("fedavg: negative weight");
    total += w;
  }
  if (!(total > 0)) throw std::invalid_argument("fedavg: total weight must be positive");

  std::vector<double> out(input.updates.front().size(), 0.0);
  for (std::size_t k = 0; k < input.updates.size(); ++k) {
    const double w = input.weights[k];
    const auto& u = input.updates[k];
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += w * u[i];
  }
  for (double& v : out) v /= total;
  return out;
}

KrumSelection krum_select(const AggregationInput& input) {
  check_updates(input);
  const std::size_t k = input.updates.size();
  if (k < input.krum_f + 3)
    throw std::invalid_argument("krum: " + std::to_string(k) + " clients cannot tolerate f=" +
                                std::to_string(input.krum_f) + " (need at least f+3)");
  const std::size_t neighbours = k - input.krum_f - 2;

  std::vector<double> dist(k * k, 0.0);
  for (std::size_t i = 0; i < k; ++i)
    for (std::size_t j = i + 1; j < k; ++j) dist[i * k + j] = dist[j * k + i] = squared_l2(input.updates[i], input.updates[j]);

  KrumSelection sel;
  sel.scores.resize(k);
  std::vector<double> row;
  for (std::size_t i = 0; i < k; ++i) {
    row.clear();
    for (std::size_t j = 0; j < k; ++j)
      if (j != i) row.push_back(dist[i * k + j]);
    std::partial_sort(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(neighbours), row.end());
    sel.scores[i] = std::accumulate(row.begin(), row.begin() + static_cast<std::ptrdiff_t>(neighbours), 0.0);
  }
  sel.index = static_cast<std::size_t>(std::min_element(sel.scores.begin(), sel.scores.end()) - sel.scores.begin());
  sel.vector = input.updates[sel.index];
  return sel;
}

ad::Var proximal_term(std::span<const ad::Var> local, std::span<const ad::Tensor> reference, double mu) {
  if (local.size() != reference.size() || local.empty())
    throw std::invalid_argument("proximal_term: " + std::to_string(local.size()) + " tensors vs " +
                                std::to_string(reference.size()) + " references");
  if (mu < 0) throw std::invalid_argument("proximal_term: mu must be >= 0");
  ad::Var total = ad::squared_distance(local[0], reference[0]);
  for (std::size_t i = 1; i < local.size(); ++i) total = ad::add(total, ad::squared_distance(local[i], reference[i]));
  return ad::scale(total, mu / 2.0);
}

double proximal_value(std::span<const double> local, std::span<const double> reference, double mu) {
  if (local.size() != reference.size())
    throw std::invalid_argument("proximal_value: length mismatch " + std::to_string(local.size()) + " vs " +
                                std::to_string(reference.size()));
  if (mu < 0) throw std::invalid_argument("proximal_value: mu must be >= 0");
  double s = 0.0;
  for (std::size_t i = 0; i < local.size(); ++i) {
    const double d = local[i] - reference[i];
    s += d * d;
  }
  return mu / 2.0 * s;
}

}  // namespace fedda::agg
