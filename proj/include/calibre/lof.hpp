#pragma once

#include "calibre/parallel.hpp"
#include "calibre/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

namespace calibre {

/// Local reachability density assigned to points whose reachability sum is
/// zero (coincident neighborhoods). Finite so scores stay finite; a fully
/// duplicated neighborhood scores exactly 1.
inline constexpr double kDuplicateLrd = 1e154;

struct LofResult {
  std::vector<double> scores;
  int neighbors_used = 0;
};

namespace lof_detail {

/// Euclidean distance with a fixed scalar accumulation order. Tests compare
/// scores bit-for-bit against an independent reference, so the arithmetic
/// sequence here is part of the contract.
inline double point_distance(const MatrixXd& pts, Index a, Index b) {
  double sum = 0.0;
  for (Index j = 0; j < pts.cols(); ++j) {
    const double d = pts(a, j) - pts(b, j);
    sum += d * d;
  }
  return std::sqrt(sum);
}

}  // namespace lof_detail

/// Standard LOF scores with exact k-NN. The neighborhood of p is every other
/// point within its k-distance (ties included), ordered by (distance, index).
/// lrd(p) = |N(p)| / sum of reachability distances; score(p) = mean neighbor
/// lrd / lrd(p).
inline LofResult lof_scores(const MatrixXd& points, int k) {
  const Index n = points.rows();
  if (k < 1) throw std::invalid_argument("lof_scores: k must be >= 1");
  if (n < static_cast<Index>(k) + 1)
    throw std::invalid_argument("lof_scores: need at least k+1 points, got " + std::to_string(n));

  MatrixXd dist(n, n);
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const auto a = static_cast<Index>(i);
    dist(a, a) = 0.0;
    for (Index b = 0; b < n; ++b)
      if (b != a) dist(a, b) = lof_detail::point_distance(points, a, b);
  });

  struct Neighbor {
    double d;
    Index idx;
  };
  std::vector<std::vector<Neighbor>> neighborhoods(static_cast<std::size_t>(n));
  std::vector<double> kdist(static_cast<std::size_t>(n));

  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    const auto p = static_cast<Index>(i);
    std::vector<Neighbor> cand;
    cand.reserve(static_cast<std::size_t>(n - 1));
    for (Index o = 0; o < n; ++o)
      if (o != p) cand.push_back({dist(p, o), o});
    auto less = [](const Neighbor& x, const Neighbor& y) {
      return x.d < y.d || (x.d == y.d && x.idx < y.idx);
    };
    std::nth_element(cand.begin(), cand.begin() + (k - 1), cand.end(), less);
    const double kd = cand[static_cast<std::size_t>(k - 1)].d;
    kdist[i] = kd;

    std::vector<Neighbor> nb;
    for (Index o = 0; o < n; ++o)
      if (o != p && dist(p, o) <= kd) nb.push_back({dist(p, o), o});
    std::sort(nb.begin(), nb.end(), less);
    neighborhoods[i] = std::move(nb);
  });

  std::vector<double> lrd(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    double rsum = 0.0;
    for (const auto& nb : neighborhoods[i])
      rsum += std::max(kdist[static_cast<std::size_t>(nb.idx)], nb.d);
    lrd[i] = rsum == 0.0 ? kDuplicateLrd
                         : static_cast<double>(neighborhoods[i].size()) / rsum;
  });

  LofResult result;
  result.neighbors_used = k;
  result.scores.resize(static_cast<std::size_t>(n));
  parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
    double lsum = 0.0;
    for (const auto& nb : neighborhoods[i]) lsum += lrd[static_cast<std::size_t>(nb.idx)];
    const double mean_lrd = lsum / static_cast<double>(neighborhoods[i].size());
    result.scores[i] = mean_lrd / lrd[i];
  });
  return result;
}

/// Per-class outlier filtering result. `preserved` holds global row indices
/// per class; classes too small for LOF pass through unfiltered and are
/// flagged in `skipped`. `scores` is aligned with the dataset rows (NaN for
/// members of skipped classes).
struct ClassFilterResult {
  std::vector<std::vector<Index>> preserved;
  std::vector<bool> skipped;
  std::vector<double> scores;
};

/// Runs LOF per class on the labeled data and keeps members scoring at most
/// cfg.lof_threshold. Never empties a class: if everything is above the
/// threshold the lowest-scoring point survives.
inline ClassFilterResult filter_classes(const LabeledEmbeddings& data,
                                        const CalibrationConfig& cfg) {
  data.validate();
  cfg.validate();
  const auto groups = data.class_indices();
  const auto num_classes = static_cast<std::size_t>(data.num_classes);

  ClassFilterResult result;
  result.preserved.resize(num_classes);
  result.skipped.assign(num_classes, false);
  result.scores.assign(static_cast<std::size_t>(data.size()),
                       std::numeric_limits<double>::quiet_NaN());

  std::vector<std::vector<double>> class_scores(num_classes);
  parallel_for(num_classes, [&](std::size_t k) {
    const auto& members = groups[k];
    if (members.size() < static_cast<std::size_t>(cfg.lof_neighbors) + 1) return;
    MatrixXd pts(static_cast<Index>(members.size()), data.dim);
    for (std::size_t i = 0; i < members.size(); ++i)
      pts.row(static_cast<Index>(i)) = data.vectors.row(members[i]);
    class_scores[k] = lof_scores(pts, cfg.lof_neighbors).scores;
  });

  for (std::size_t k = 0; k < num_classes; ++k) {
    const auto& members = groups[k];
    if (members.size() < static_cast<std::size_t>(cfg.lof_neighbors) + 1) {
      result.preserved[k] = members;  // too small for LOF, pass through
      result.skipped[k] = true;
      continue;
    }
    const auto& scores = class_scores[k];
    std::size_t best = 0;
    for (std::size_t i = 0; i < members.size(); ++i) {
      result.scores[static_cast<std::size_t>(members[i])] = scores[i];
      if (scores[i] < scores[best]) best = i;
      if (scores[i] <= cfg.lof_threshold) result.preserved[k].push_back(members[i]);
    }
    if (result.preserved[k].empty()) result.preserved[k].push_back(members[best]);
  }
  return result;
}

}  // namespace calibre
