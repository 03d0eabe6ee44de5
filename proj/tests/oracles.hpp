#pragma once

// Independent reference implementations for tests. Nothing here calls into the
// library's numerical code: loops are written out directly.

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <vector>

#include "fedda/autodiff.hpp"
#include "fedda/grid.hpp"
#include "fedda/rng.hpp"
#include "fedda/segnet.hpp"

namespace oracle {

using fedda::BoolGrid;
using fedda::SeedStream;
using fedda::ad::Tensor;

// Same-padded 3x3 cross-correlation, six nested loops.
inline Tensor conv3x3(const Tensor& x, const Tensor& k, const Tensor& b) {
  const std::size_t cin = x.dim(0), h = x.dim(1), w = x.dim(2), cout = k.dim(0);
  Tensor y({cout, h, w});
  for (std::size_t o = 0; o < cout; ++o)
    for (std::size_t r = 0; r < h; ++r)
      for (std::size_t c = 0; c < w; ++c) {
        double acc = b[o];
        for (std::size_t i = 0; i < cin; ++i)
          for (int dr = -1; dr <= 1; ++dr)
            for (int dc = -1; dc <= 1; ++dc) {
              const long rr = static_cast<long>(r) + dr, cc = static_cast<long>(c) + dc;
              if (rr < 0 || cc < 0 || rr >= static_cast<long>(h) || cc >= static_cast<long>(w)) continue;
              acc += k[((o * cin + i) * 3 + (dr + 1)) * 3 + (dc + 1)] * x[(i * h + rr) * w + cc];
            }
        y[(o * h + r) * w + c] = acc;
      }
  return y;
}

inline Tensor relu(Tensor t) {
  for (double& v : t.data()) v = v > 0 ? v : 0.0;
  return t;
}

inline const Tensor& param(const fedda::seg::TensorList& list, const std::string& name) {
  for (const auto& nt : list)
    if (nt.name == name) return nt.value;
  throw std::out_of_range(name);
}

inline Tensor features(const fedda::seg::ParamSet& p, const Tensor& image) {
  Tensor h = relu(conv3x3(image, param(p.backbone, "backbone.conv1.weight"), param(p.backbone, "backbone.conv1.bias")));
  return relu(conv3x3(h, param(p.backbone, "backbone.conv2.weight"), param(p.backbone, "backbone.conv2.bias")));
}

// Sign pattern of every ReLU pre-activation (backbone and discriminator) for one image.
inline std::vector<bool> relu_pattern(const fedda::seg::ParamSet& p, const Tensor& image) {
  std::vector<bool> out;
  auto record = [&](const Tensor& z) {
    for (double v : z.data()) out.push_back(v > 0);
  };
  const Tensor z1 = conv3x3(image, param(p.backbone, "backbone.conv1.weight"), param(p.backbone, "backbone.conv1.bias"));
  record(z1);
  const Tensor z2 = conv3x3(relu(z1), param(p.backbone, "backbone.conv2.weight"), param(p.backbone, "backbone.conv2.bias"));
  record(z2);
  record(conv3x3(relu(z2), param(p.discriminator, "discriminator.conv.weight"),
                 param(p.discriminator, "discriminator.conv.bias")));
  return out;
}

inline Tensor decode(const fedda::seg::ParamSet& p, const Tensor& f) {
  return conv3x3(f, param(p.decoder, "decoder.conv.weight"), param(p.decoder, "decoder.conv.bias"));
}

inline double discriminate(const fedda::seg::ParamSet& p, const Tensor& f) {
  const Tensor h = relu(conv3x3(f, param(p.discriminator, "discriminator.conv.weight"),
                                param(p.discriminator, "discriminator.conv.bias")));
  const std::size_t ch = h.dim(0), hw = h.dim(1) * h.dim(2);
  const Tensor& w = param(p.discriminator, "discriminator.fc.weight");
  double z = param(p.discriminator, "discriminator.fc.bias")[0];
  for (std::size_t c = 0; c < ch; ++c) {
    double s = 0;
    for (std::size_t i = 0; i < hw; ++i) s += h[c * hw + i];
    z += w[c] * s / static_cast<double>(hw);
  }
  return z;
}

// Mean pixel cross-entropy via log-sum-exp.
inline double cross_entropy(const Tensor& logits, const std::vector<int>& labels) {
  const std::size_t c = logits.dim(0), hw = logits.dim(1) * logits.dim(2);
  double total = 0;
  for (std::size_t p = 0; p < hw; ++p) {
    double mx = -std::numeric_limits<double>::infinity();
    for (std::size_t k = 0; k < c; ++k) mx = std::max(mx, logits[k * hw + p]);
    double s = 0;
    for (std::size_t k = 0; k < c; ++k) s += std::exp(logits[k * hw + p] - mx);
    total += mx + std::log(s) - logits[static_cast<std::size_t>(labels[p]) * hw + p];
  }
  return total / static_cast<double>(hw);
}

inline double bce(double z, int t) {
  // -[t log s(z) + (1-t) log(1 - s(z))], evaluated without overflow
  return t ? std::log1p(std::exp(-std::fabs(z))) + std::max(-z, 0.0)
           : std::log1p(std::exp(-std::fabs(z))) + std::max(z, 0.0);
}

// Central difference of f with respect to x (restored afterwards).
inline double central_difference(const std::function<double()>& f, double& x, double h = 1e-5) {
  const double orig = x;
  x = orig + h;
  const double up = f();
  x = orig - h;
  const double down = f();
  x = orig;
  return (up - down) / (2 * h);
}

inline double relative_error(double a, double n) {
  return std::fabs(a - n) / std::max({std::fabs(a), std::fabs(n), 1e-6});
}

inline double dice(const BoolGrid& a, const BoolGrid& b) {
  double na = 0, nb = 0, both = 0;
  for (std::size_t r = 0; r < a.rows; ++r)
    for (std::size_t c = 0; c < a.cols; ++c) {
      na += a.at(r, c) != 0;
      nb += b.at(r, c) != 0;
      both += a.at(r, c) && b.at(r, c);
    }
  return na + nb == 0 ? 1.0 : 2 * both / (na + nb);
}

inline bool on_boundary(const BoolGrid& m, long r, long c) {
  if (!m.at(r, c)) return false;
  const long dr[] = {-1, 1, 0, 0}, dc[] = {0, 0, -1, 1};
  for (int i = 0; i < 4; ++i) {
    const long rr = r + dr[i], cc = c + dc[i];
    if (rr < 0 || cc < 0 || rr >= static_cast<long>(m.rows) || cc >= static_cast<long>(m.cols)) return true;
    if (!m.at(rr, cc)) return true;
  }
  return false;
}

inline std::vector<std::pair<long, long>> boundary_points(const BoolGrid& m) {
  std::vector<std::pair<long, long>> pts;
  for (long r = 0; r < static_cast<long>(m.rows); ++r)
    for (long c = 0; c < static_cast<long>(m.cols); ++c)
      if (on_boundary(m, r, c)) pts.emplace_back(r, c);
  return pts;
}

inline std::vector<double> directed(const std::vector<std::pair<long, long>>& from,
                                    const std::vector<std::pair<long, long>>& to) {
  std::vector<double> out;
  for (auto [r, c] : from) {
    double best = std::numeric_limits<double>::infinity();
    for (auto [r2, c2] : to) best = std::min(best, std::hypot(double(r - r2), double(c - c2)));
    out.push_back(best);
  }
  return out;
}

// All-pairs HD95: union of both directed distance sets, nearest-rank 95th percentile.
inline double hd95(const BoolGrid& a, const BoolGrid& b) {
  const auto pa = boundary_points(a), pb = boundary_points(b);
  if (pa.empty() && pb.empty()) return 0.0;
  if (pa.empty() || pb.empty()) return std::hypot(double(a.rows), double(a.cols));
  auto d = directed(pa, pb);
  const auto d2 = directed(pb, pa);
  d.insert(d.end(), d2.begin(), d2.end());
  std::sort(d.begin(), d.end());
  std::size_t rank = 0;
  while (static_cast<double>(rank) < 0.95 * static_cast<double>(d.size())) ++rank;
  return d[std::max<std::size_t>(rank, 1) - 1];
}

inline double hausdorff(const BoolGrid& a, const BoolGrid& b) {
  const auto pa = boundary_points(a), pb = boundary_points(b);
  if (pa.empty() && pb.empty()) return 0.0;
  if (pa.empty() || pb.empty()) return std::hypot(double(a.rows), double(a.cols));
  auto d = directed(pa, pb);
  const auto d2 = directed(pb, pa);
  return std::max(*std::max_element(d.begin(), d.end()), *std::max_element(d2.begin(), d2.end()));
}

inline BoolGrid random_mask(SeedStream& rng, std::size_t n, double p) {
  BoolGrid g(n, n, 0);
  for (auto& v : g.cells) v = rng.uniform() < p ? 1 : 0;
  return g;
}

// O(K^2) Krum scorer: 0-based index of the lowest score, first on ties.
inline std::size_t krum(const std::vector<std::vector<double>>& u, std::size_t f) {
  const std::size_t k = u.size(), m = k - f - 2;
  std::size_t best = 0;
  double best_score = std::numeric_limits<double>::infinity();
  for (std::size_t i = 0; i < k; ++i) {
    std::vector<double> d;
    for (std::size_t j = 0; j < k; ++j) {
      if (i == j) continue;
      double s = 0;
      for (std::size_t x = 0; x < u[i].size(); ++x) s += (u[i][x] - u[j][x]) * (u[i][x] - u[j][x]);
      d.push_back(s);
    }
    std::sort(d.begin(), d.end());
    double score = 0;
    for (std::size_t j = 0; j < m; ++j) score += d[j];
    if (score < best_score) {
      best_score = score;
      best = i;
    }
  }
  return best;
}

inline Tensor random_tensor(SeedStream& rng, fedda::ad::Shape shape, double lo = -1, double hi = 1) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

// Values bounded away from zero, so relu kinks stay outside the difference stencil.
inline Tensor random_away_from_zero(SeedStream& rng, fedda::ad::Shape shape) {
  Tensor t(std::move(shape));
  for (double& v : t.data()) {
    const double m = rng.uniform(0.05, 1.0);
    v = rng.uniform() < 0.5 ? -m : m;
  }
  return t;
}

}  // namespace oracle
