#include "fedda/evalmetrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace fedda::metrics {
namespace {

void require_same_shape(const BoolGrid& a, const BoolGrid& b, const char* what) {
  if (!a.same_shape(b))
    throw std::invalid_argument(std::string(what) + ": mask shapes differ (" + std::to_string(a.rows) + "x" +
                                std::to_string(a.cols) + " vs " + std::to_string(b.rows) + "x" +
                                std::to_string(b.cols) + ")");
}

bool any(const BoolGrid& g) {
  return std::any_of(g.cells.begin(), g.cells.end(), [](std::uint8_t v) { return v != 0; });
}

constexpr double kInf = std::numeric_limits<double>::infinity();

// One-dimensional squared distance transform (lower envelope of parabolas).
void edt_1d(const std::vector<double>& f, std::vector<double>& d) {
  const std::size_t n = f.size();
  std::vector<std::size_t> v(n);
  std::vector<double> z(n + 1);
  std::size_t k = 0;
  std::size_t first = n;
  for (std::size_t q = 0; q < n; ++q)
    if (f[q] < kInf) {
      first = q;
      break;
    }
  if (first == n) {
    std::fill(d.begin(), d.end(), kInf);
    return;
  }
  v[0] = first;
  z[0] = -kInf;
  z[1] = kInf;
  for (std::size_t q = first + 1; q < n; ++q) {
    if (f[q] == kInf) continue;
    const auto qd = static_cast<double>(q);
    double s = 0;
    while (true) {
      const auto vk = static_cast<double>(v[k]);
      s = ((f[q] + qd * qd) - (f[v[k]] + vk * vk)) / (2.0 * qd - 2.0 * vk);
      if (s <= z[k] && k > 0) {
        --k;
        continue;
      }
      break;
    }
    if (s <= z[k]) {
      v[k] = q;
      z[k + 1] = kInf;
      continue;
    }
    ++k;
    v[k] = q;
    z[k] = s;
    z[k + 1] = kInf;
  }
  k = 0;
  for (std::size_t q = 0; q < n; ++q) {
    while (z[k + 1] < static_cast<double>(q)) ++k;
    const double dq = static_cast<double>(q) - static_cast<double>(v[k]);
    d[q] = dq * dq + f[v[k]];
  }
}

// Exact squared Euclidean distance from every cell to the nearest set cell of `sites`.
std::vector<double> squared_distance_transform(const BoolGrid& sites) {
  const std::size_t rows = sites.rows, cols = sites.cols;
  std::vector<double> grid(rows * cols);
  for (std::size_t i = 0; i < grid.size(); ++i) grid[i] = sites.cells[i] ? 0.0 : kInf;
  std::vector<double> f(rows), d(rows);
  for (std::size_t c = 0; c < cols; ++c) {
    for (std::size_t r = 0; r < rows; ++r) f[r] = grid[r * cols + c];
    edt_1d(f, d);
    for (std::size_t r = 0; r < rows; ++r) grid[r * cols + c] = d[r];
  }
  f.resize(cols);
  d.resize(cols);
  for (std::size_t r = 0; r < rows; ++r) {
    for (std::size_t c = 0; c < cols; ++c) f[c] = grid[r * cols + c];
    edt_1d(f, d);
    for (std::size_t c = 0; c < cols; ++c) grid[r * cols + c] = d[c];
  }
  return grid;
}

void directed_distances(const BoolGrid& from_boundary, const std::vector<double>& to_sq_dt,
                        std::vector<double>& out) {
  for (std::size_t i = 0; i < from_boundary.size(); ++i)
    if (from_boundary.cells[i]) out.push_back(std::sqrt(to_sq_dt[i]));
}

}  // namespace

double dice(const BoolGrid& pred, const BoolGrid& truth) {
  require_same_shape(pred, truth, "dice");
  std::size_t p = 0, t = 0, both = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool a = pred.cells[i] != 0, b = truth.cells[i] != 0;
    p += a;
    t += b;
    both += a && b;
  }
  if (p + t == 0) return 1.0;
  return 2.0 * static_cast<double>(both) / static_cast<double>(p + t);
}

BoolGrid boundary(const BoolGrid& mask) {
  BoolGrid out(mask.rows, mask.cols, 0);
  for (std::size_t r = 0; r < mask.rows; ++r) {
    for (std::size_t c = 0; c < mask.cols; ++c) {
      if (!mask.at(r, c)) continue;
      const bool edge = r == 0 || c == 0 || r + 1 == mask.rows || c + 1 == mask.cols;
      if (edge || !mask.at(r - 1, c) || !mask.at(r + 1, c) || !mask.at(r, c - 1) || !mask.at(r, c + 1))
        out.at(r, c) = 1;
    }
  }
  return out;
}

double hd95_sentinel(std::size_t rows, std::size_t cols) {
  return std::sqrt(static_cast<double>(rows * rows + cols * cols));
}

double hd95(const BoolGrid& pred, const BoolGrid& truth) {
  require_same_shape(pred, truth, "hd95");
  const bool has_p = any(pred), has_t = any(truth);
  if (!has_p && !has_t) return 0.0;
  if (has_p != has_t) return hd95_sentinel(pred.rows, pred.cols);

  const BoolGrid bp = boundary(pred), bt = boundary(truth);
  std::vector<double> dists;
  directed_distances(bp, squared_distance_transform(bt), dists);
  directed_distances(bt, squared_distance_transform(bp), dists);
  std::sort(dists.begin(), dists.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(dists.size())));
  return dists[std::max<std::size_t>(rank, 1) - 1];
}

BoolGrid class_mask(const IntGrid& labels, int cls) {
  BoolGrid out(labels.rows, labels.cols, 0);
  for (std::size_t i = 0; i < labels.size(); ++i) out.cells[i] = labels.cells[i] == cls ? 1 : 0;
  return out;
}

IntGrid argmax_classes(const ad::Tensor& logits) {
  if (logits.rank() != 3) throw ad::ShapeError("argmax_classes expects [C,H,W]");
  const std::size_t c = logits.dim(0), h = logits.dim(1), w = logits.dim(2), hw = h * w;
  IntGrid out(h, w, 0);
  for (std::size_t p = 0; p < hw; ++p) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < c; ++k)
      if (logits[k * hw + p] > logits[best * hw + p]) best = k;
    out.cells[p] = static_cast<int>(best);
  }
  return out;
}

ClassMetrics evaluate_predictions(std::span<const IntGrid> predictions, std::span<const IntGrid> truths,
                                  std::size_t num_classes) {
  if (predictions.empty()) throw std::invalid_argument("evaluate: empty test set");
  if (predictions.size() != truths.size()) throw std::invalid_argument("evaluate: prediction/truth count mismatch");
  if (num_classes < 2) throw std::invalid_argument("evaluate: need at least one foreground class");
  const std::size_t fg = num_classes - 1;
  ClassMetrics m;
  m.dice.assign(fg, 0.0);
  m.hd95.assign(fg, 0.0);
  m.hd95_sentinels.assign(fg, 0);
  for (std::size_t s = 0; s < predictions.size(); ++s) {
    for (std::size_t k = 1; k < num_classes; ++k) {
      const BoolGrid p = class_mask(predictions[s], static_cast<int>(k));
      const BoolGrid t = class_mask(truths[s], static_cast<int>(k));
      m.dice[k - 1] += dice(p, t);
      m.hd95[k - 1] += hd95(p, t);
      if (any(p) != any(t)) ++m.hd95_sentinels[k - 1];
    }
  }
  const auto n = static_cast<double>(predictions.size());
  for (std::size_t k = 0; k < fg; ++k) {
    m.dice[k] /= n;
    m.hd95[k] /= n;
    m.mean_dice += m.dice[k];
    m.mean_hd95 += m.hd95[k];
  }
  m.mean_dice /= static_cast<double>(fg);
  m.mean_hd95 /= static_cast<double>(fg);
  return m;
}

ClassMetrics evaluate_global(const Predictor& predict, std::span<const data::Sample> test, std::size_t num_classes) {
  if (test.empty()) throw std::invalid_argument("evaluate_global: empty test set");
  std::vector<IntGrid> preds, truths;
  preds.reserve(test.size());
  truths.reserve(test.size());
  for (const auto& s : test) {
    preds.push_back(predict(s));
    truths.push_back(s.mask);
  }
  return evaluate_predictions(preds, truths, num_classes);
}

ClassMetrics evaluate_global(const seg::ParamSet& params, std::span<const data::Sample> test) {
  return evaluate_global([&](const data::Sample& s) { return argmax_classes(seg::segment(params, s.image)); }, test,
                         params.config.num_classes);
}

}  // namespace fedda::metrics
