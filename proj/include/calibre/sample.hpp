#pragma once

#include "calibre/calibrate.hpp"
#include "calibre/rng.hpp"
#include "calibre/simulate.hpp"
#include "calibre/types.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace calibre {

/// Draws `count` points from N(mean, cov) through the eigendecomposition of
/// cov, clamping small negative eigenvalues to zero. Works for semidefinite
/// covariances (e.g. calibrated tails with the rank-one ones disturbance).
inline std::vector<VectorXd> sample_mvn(const VectorXd& mean, const MatrixXd& cov, Index count,
                                        RandomStream& rng) {
  if (cov.rows() != mean.size())
    throw std::invalid_argument("sample_mvn: mean and covariance shapes disagree");
  const MatrixXd factor = detail::psd_sqrt_factor(cov, "sample_mvn");
  const Index m = mean.size();

  std::vector<VectorXd> draws;
  draws.reserve(static_cast<std::size_t>(std::max<Index>(count, 0)));
  VectorXd u(m);
  for (Index i = 0; i < count; ++i) {
    for (Index j = 0; j < m; ++j) u(j) = rng.normal();
    draws.push_back(mean + factor * u);
  }
  return draws;
}

/// "max" target = size of the largest class.
struct BalanceTarget {
  bool use_max = true;
  Index per_class = 0;

  static BalanceTarget max() { return {}; }
  static BalanceTarget fixed(Index n) { return {false, n}; }
};

struct BalancedDataset {
  LabeledEmbeddings data;
  std::vector<bool> synthetic_mask;  // aligned with data rows
};

/// Tops every class up to the target with draws from its calibrated
/// Gaussian. Original rows are preserved verbatim (and first); synthetic
/// rows are appended per class in ascending class order.
inline BalancedDataset balance_dataset(const LabeledEmbeddings& data,
                                       const std::vector<CalibratedStats>& stats,
                                       BalanceTarget target, RandomStream& rng) {
  data.validate();
  if (static_cast<Index>(stats.size()) != data.num_classes)
    throw std::invalid_argument("balance_dataset: stats do not match num_classes");

  const auto counts = data.class_counts();
  Index goal = target.per_class;
  if (target.use_max) goal = *std::max_element(counts.begin(), counts.end());
  for (std::size_t k = 0; k < counts.size(); ++k) {
    if (counts[k] > goal)
      throw std::invalid_argument("balance_dataset: target " + std::to_string(goal) +
                                  " is below the size of class " + std::to_string(k));
  }

  Index total = data.size();
  for (Index c : counts) total += goal - c;

  BalancedDataset out;
  out.data.dim = data.dim;
  out.data.num_classes = data.num_classes;
  out.data.vectors.resize(total, data.dim);
  out.data.labels.resize(static_cast<std::size_t>(total));
  out.synthetic_mask.assign(static_cast<std::size_t>(total), false);

  out.data.vectors.topRows(data.size()) = data.vectors;
  std::copy(data.labels.begin(), data.labels.end(), out.data.labels.begin());

  Index row = data.size();
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const Index deficit = goal - counts[k];
    if (deficit == 0) continue;
    RandomStream stream = rng.child(static_cast<std::uint64_t>(k));
    const auto draws =
        sample_mvn(stats[k].calibrated_mean, stats[k].calibrated_cov, deficit, stream);
    for (const VectorXd& z : draws) {
      out.data.vectors.row(row) = z.transpose();
      out.data.labels[static_cast<std::size_t>(row)] = static_cast<int>(k);
      out.synthetic_mask[static_cast<std::size_t>(row)] = true;
      ++row;
    }
  }
  out.data.validate();
  return out;
}

}  // namespace calibre
