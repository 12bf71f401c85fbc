#pragma once

#include "calibre/lof.hpp"
#include "calibre/types.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>
#include <vector>

namespace calibre {

/// Head/tail class split: head classes are the minimal descending-count
/// prefix covering at least head_mass of the training instances.
struct ClassPartition {
  std::vector<int> head;      // descending count order, ties by lower id
  std::vector<int> tail;      // ascending id
  std::vector<Index> counts;  // per class id

  bool is_head(int class_id) const {
    return std::find(head.begin(), head.end(), class_id) != head.end();
  }
};

/// Per-class calibration output. For head classes the calibrated fields
/// equal the base fields and the donor set is empty.
struct CalibratedStats {
  ClassStats base;
  VectorXd calibrated_mean;
  MatrixXd calibrated_cov;
  std::vector<int> donors;      // donor head class ids, nearest first
  std::vector<double> weights;  // one per donor, sum to 1
  bool is_head = false;
  bool uniform_weight_fallback = false;  // all donor distances were zero
};

/// Sample mean and Bessel-corrected covariance over each preserved set.
/// Singleton sets get a zero covariance and are reported via
/// `singleton_classes` when the caller asks.
inline std::vector<ClassStats> robust_class_stats(const LabeledEmbeddings& data,
                                                  const std::vector<std::vector<Index>>& preserved,
                                                  std::vector<int>* singleton_classes = nullptr) {
  data.validate();
  if (static_cast<Index>(preserved.size()) != data.num_classes)
    throw std::invalid_argument("robust_class_stats: preserved sets do not match num_classes");

  const Index m = data.dim;
  std::vector<ClassStats> stats(preserved.size());
  for (std::size_t k = 0; k < preserved.size(); ++k) {
    const auto& members = preserved[k];
    if (members.empty())
      throw std::invalid_argument("robust_class_stats: class " + std::to_string(k) +
                                  " has an empty preserved set");
    ClassStats& s = stats[k];
    s.class_id = static_cast<int>(k);
    s.count = static_cast<Index>(members.size());

    VectorXd sum = VectorXd::Zero(m);
    for (Index row : members) sum += data.vectors.row(row).transpose();
    s.mean = sum / static_cast<double>(members.size());

    s.covariance = MatrixXd::Zero(m, m);
    if (members.size() >= 2) {
      for (Index row : members) {
        const VectorXd d = data.vectors.row(row).transpose() - s.mean;
        s.covariance += d * d.transpose();
      }
      s.covariance /= static_cast<double>(members.size() - 1);
    } else if (singleton_classes) {
      singleton_classes->push_back(static_cast<int>(k));
    }
  }
  return stats;
}

inline ClassPartition split_head_tail(const std::vector<Index>& counts, double head_mass) {
  if (counts.empty()) throw std::invalid_argument("split_head_tail: counts empty");
  if (!(head_mass > 0.0 && head_mass <= 1.0))
    throw std::invalid_argument("split_head_tail: head_mass must be in (0,1]");

  std::vector<int> order(counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return counts[static_cast<std::size_t>(a)] > counts[static_cast<std::size_t>(b)];
  });

  double total = 0.0;
  for (Index c : counts) total += static_cast<double>(c);
  const double need = head_mass * total;

  ClassPartition part;
  part.counts = counts;
  double cum = 0.0;
  std::size_t cut = 0;
  while (cut < order.size() && cum < need) {
    cum += static_cast<double>(counts[static_cast<std::size_t>(order[cut])]);
    ++cut;
  }
  part.head.assign(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(cut));
  part.tail.assign(order.begin() + static_cast<std::ptrdiff_t>(cut), order.end());
  std::sort(part.tail.begin(), part.tail.end());
  return part;
}

/// The q head classes nearest to tail class k in Euclidean distance between
/// estimated means. Ties break toward the lower class id.
inline std::vector<int> topq_heads(const std::vector<ClassStats>& stats,
                                   const ClassPartition& partition, int k, int q) {
  if (q < 1) throw std::invalid_argument("topq_heads: q must be >= 1");
  if (static_cast<std::size_t>(q) > partition.head.size())
    throw std::invalid_argument("topq_heads: q=" + std::to_string(q) + " exceeds " +
                                std::to_string(partition.head.size()) + " head classes");

  const VectorXd& mu_k = stats[static_cast<std::size_t>(k)].mean;
  std::vector<std::pair<double, int>> by_dist;
  by_dist.reserve(partition.head.size());
  for (int h : partition.head) {
    const double d2 = (stats[static_cast<std::size_t>(h)].mean - mu_k).squaredNorm();
    by_dist.emplace_back(d2, h);
  }
  std::sort(by_dist.begin(), by_dist.end());
  std::vector<int> donors(static_cast<std::size_t>(q));
  for (int i = 0; i < q; ++i) donors[static_cast<std::size_t>(i)] = by_dist[static_cast<std::size_t>(i)].second;
  return donors;
}

/// Donor weights w_c = n_c * ||mu_c - mu_k||^2 / sum_j n_j * ||mu_j - mu_k||^2.
/// More distant donors get larger weights; `invert` flips that for
/// experimentation. All-zero distances fall back to uniform weights.
inline std::vector<double> donor_weights(const std::vector<ClassStats>& stats,
                                         const std::vector<Index>& counts,
                                         const std::vector<int>& donor_set, int k,
                                         bool invert = false,
                                         bool* uniform_fallback = nullptr) {
  if (donor_set.empty()) throw std::invalid_argument("donor_weights: empty donor set");
  const VectorXd& mu_k = stats[static_cast<std::size_t>(k)].mean;

  std::vector<double> raw(donor_set.size());
  bool any_zero = false;
  for (std::size_t i = 0; i < donor_set.size(); ++i) {
    const auto c = static_cast<std::size_t>(donor_set[i]);
    if (counts[c] < 1) throw std::invalid_argument("donor_weights: donor count must be >= 1");
    const double d2 = (stats[c].mean - mu_k).squaredNorm();
    any_zero = any_zero || d2 == 0.0;
    raw[i] = invert ? (d2 == 0.0 ? 0.0 : static_cast<double>(counts[c]) / d2)
                    : static_cast<double>(counts[c]) * d2;
  }

  double denom = 0.0;
  for (double r : raw) denom += r;
  if (denom == 0.0 || (invert && any_zero)) {
    if (uniform_fallback) *uniform_fallback = true;
    return std::vector<double>(donor_set.size(), 1.0 / static_cast<double>(donor_set.size()));
  }
  if (uniform_fallback) *uniform_fallback = false;
  for (double& r : raw) r /= denom;
  return raw;
}

/// Tail-class statistics blended with weighted head statistics:
///   mu'_k    = gamma * sum_c w_c mu_c    + (1-gamma) * mu_k
///   Sigma'_k = gamma * sum_c w_c Sigma_c + (1-gamma) * Sigma_k + alpha * D
/// where D is the all-ones matrix (or identity, per config). Head classes
/// pass through unchanged.
inline std::vector<CalibratedStats> calibrate_tail(const std::vector<ClassStats>& stats,
                                                   const std::vector<Index>& counts,
                                                   const ClassPartition& partition,
                                                   const CalibrationConfig& cfg) {
  cfg.validate();
  if (stats.empty()) throw std::invalid_argument("calibrate_tail: no class stats");
  const Index m = stats.front().mean.size();

  std::vector<CalibratedStats> out(stats.size());
  for (std::size_t k = 0; k < stats.size(); ++k) {
    out[k].base = stats[k];
    out[k].is_head = partition.is_head(static_cast<int>(k));
    if (out[k].is_head) {
      out[k].calibrated_mean = stats[k].mean;
      out[k].calibrated_cov = stats[k].covariance;
      continue;
    }

    const auto donors = topq_heads(stats, partition, static_cast<int>(k), cfg.q);
    bool fallback = false;
    const auto weights =
        donor_weights(stats, counts, donors, static_cast<int>(k), cfg.invert_weights, &fallback);
    out[k].donors = donors;
    out[k].weights = weights;
    out[k].uniform_weight_fallback = fallback;

    VectorXd blended_mean = VectorXd::Zero(m);
    MatrixXd blended_cov = MatrixXd::Zero(m, m);
    for (std::size_t i = 0; i < donors.size(); ++i) {
      const auto& donor = stats[static_cast<std::size_t>(donors[i])];
      blended_mean += weights[i] * donor.mean;
      blended_cov += weights[i] * donor.covariance;
    }
    out[k].calibrated_mean = cfg.gamma * blended_mean + (1.0 - cfg.gamma) * stats[k].mean;
    out[k].calibrated_cov = cfg.gamma * blended_cov + (1.0 - cfg.gamma) * stats[k].covariance;
    if (cfg.disturbance == Disturbance::kOnes)
      out[k].calibrated_cov.array() += cfg.alpha;
    else
      out[k].calibrated_cov += cfg.alpha * MatrixXd::Identity(m, m);
  }
  return out;
}

/// Uniform-weight calibrated mean used by the theory harness:
///   mu'_k = sum_{j in donors} tau/(1+(q-1)tau) mu_j + 1/(1+(q-1)tau) mu_k.
/// The coefficients are applied verbatim; for q > 1 they do not sum to one.
inline VectorXd uniform_calibrated_mean(const MatrixXd& means, const std::vector<int>& donor_set,
                                        int k, double tau) {
  if (!(tau >= 0.0)) throw std::invalid_argument("uniform_calibrated_mean: tau must be >= 0");
  const auto q = static_cast<double>(donor_set.size());
  const double denom = 1.0 + (q - 1.0) * tau;
  VectorXd out = (1.0 / denom) * means.row(k).transpose();
  for (int j : donor_set) out += (tau / denom) * means.row(j).transpose();
  return out;
}

inline VectorXd uniform_calibrated_mean(const std::vector<ClassStats>& stats,
                                        const std::vector<int>& donor_set, int k, double tau) {
  if (stats.empty()) throw std::invalid_argument("uniform_calibrated_mean: no stats");
  MatrixXd means(static_cast<Index>(stats.size()), stats.front().mean.size());
  for (std::size_t i = 0; i < stats.size(); ++i) means.row(static_cast<Index>(i)) = stats[i].mean;
  return uniform_calibrated_mean(means, donor_set, k, tau);
}

}  // namespace calibre
