#pragma once

#include "calibre/rng.hpp"
#include "calibre/types.hpp"

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace calibre {

/// Row-stochastic label corruption matrix. Row i gives the distribution of
/// the observed label when the clean label is i.
struct TransitionMatrix {
  MatrixXd entries;           // K x K
  std::vector<Index> counts;  // class sizes the matrix was built from
  double noise_rate = 0.0;

  int num_classes() const { return static_cast<int>(entries.rows()); }

  void validate() const {
    const Index k = entries.rows();
    if (k < 2 || entries.cols() != k)
      throw std::invalid_argument("TransitionMatrix: need a square matrix, K >= 2");
    for (Index i = 0; i < k; ++i) {
      double row_sum = 0.0;
      for (Index j = 0; j < k; ++j) {
        const double t = entries(i, j);
        if (!(t >= 0.0 && t <= 1.0))
          throw std::invalid_argument("TransitionMatrix: entry outside [0,1]");
        row_sum += t;
      }
      if (std::abs(row_sum - 1.0) > 1e-12)
        throw std::invalid_argument("TransitionMatrix: row " + std::to_string(i) +
                                    " sums to " + std::to_string(row_sum));
    }
  }
};

/// Exponential long-tail class sizes: counts[k] = round(base * rho^(-k/(K-1))).
/// Rounding is round-half-to-even; every count is clamped to >= 1, so the
/// head/tail ratio equals rho up to rounding.
inline std::vector<Index> longtail_counts(const CorruptionSpec& spec) {
  spec.validate();
  const double v = spec.decay();
  std::vector<Index> counts(static_cast<std::size_t>(spec.num_classes));
  for (int k = 0; k < spec.num_classes; ++k) {
    const double exact = static_cast<double>(spec.base_count) * std::pow(v, k);
    const auto rounded = static_cast<Index>(std::nearbyint(exact));
    counts[static_cast<std::size_t>(k)] = std::max<Index>(1, rounded);
  }
  return counts;
}

/// Uniform without-replacement subsample of counts[k] members per class,
/// output order shuffled.
inline LabeledEmbeddings subsample_longtail(const LabeledEmbeddings& data,
                                            const std::vector<Index>& counts,
                                            RandomStream& rng) {
  data.validate();
  if (static_cast<Index>(counts.size()) != data.num_classes)
    throw std::invalid_argument("subsample_longtail: counts size does not match num_classes");

  const auto groups = data.class_indices();
  std::vector<Index> chosen;
  for (std::size_t k = 0; k < counts.size(); ++k) {
    const auto& members = groups[k];
    const auto want = static_cast<std::size_t>(counts[k]);
    if (want > members.size())
      throw std::invalid_argument("subsample_longtail: class " + std::to_string(k) + " has " +
                                  std::to_string(members.size()) + " members, requested " +
                                  std::to_string(want));
    for (std::size_t pos : rng.sample_without_replacement(members.size(), want))
      chosen.push_back(members[pos]);
  }
  rng.shuffle(chosen);

  LabeledEmbeddings out;
  out.dim = data.dim;
  out.num_classes = data.num_classes;
  out.vectors.resize(static_cast<Index>(chosen.size()), data.dim);
  out.labels.resize(chosen.size());
  for (std::size_t i = 0; i < chosen.size(); ++i) {
    out.vectors.row(static_cast<Index>(i)) = data.vectors.row(chosen[i]);
    out.labels[i] = data.labels[static_cast<std::size_t>(chosen[i])];
  }
  out.validate();
  return out;
}

/// Size-correlated flip matrix: T_ii = 1 - eta, T_ij = eta * n_j / (n - n_i).
inline TransitionMatrix build_transition(const std::vector<Index>& counts, double eta) {
  const auto k = static_cast<Index>(counts.size());
  if (k < 2) throw std::invalid_argument("build_transition: need K >= 2");
  if (!(eta >= 0.0 && eta < 1.0))
    throw std::invalid_argument("build_transition: eta must be in [0,1)");
  Index total = 0;
  for (Index c : counts) {
    if (c < 1) throw std::invalid_argument("build_transition: all counts must be >= 1");
    total += c;
  }

  TransitionMatrix t;
  t.counts = counts;
  t.noise_rate = eta;
  t.entries.resize(k, k);
  for (Index i = 0; i < k; ++i) {
    const double rest = static_cast<double>(total - counts[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < k; ++j) {
      t.entries(i, j) = (i == j)
                            ? 1.0 - eta
                            : eta * static_cast<double>(counts[static_cast<std::size_t>(j)]) / rest;
    }
  }
  t.validate();
  return t;
}

namespace detail {

/// Inverse-CDF draw from one row of a row-stochastic matrix.
inline int sample_row(const MatrixXd& rows, Index i, RandomStream& rng) {
  const double u = rng.uniform01();
  double cum = 0.0;
  const Index k = rows.cols();
  for (Index j = 0; j < k; ++j) {
    cum += rows(i, j);
    if (u < cum) return static_cast<int>(j);
  }
  return static_cast<int>(k - 1);
}

}  // namespace detail

/// Resamples every label from its transition row. Vectors are untouched.
/// The clean labels are returned out-of-band, for evaluation only.
inline std::pair<LabeledEmbeddings, std::vector<int>> inject_noise(const LabeledEmbeddings& data,
                                                                   const TransitionMatrix& t,
                                                                   RandomStream& rng) {
  data.validate();
  t.validate();
  if (t.num_classes() != data.num_classes)
    throw std::invalid_argument("inject_noise: transition matrix K does not match data");

  LabeledEmbeddings noisy = data;
  for (std::size_t i = 0; i < noisy.labels.size(); ++i)
    noisy.labels[i] = detail::sample_row(t.entries, data.labels[i], rng);
  return {std::move(noisy), data.labels};
}

namespace detail {

/// Square root factor E * sqrt(clamp(Lambda)) of a symmetric PSD matrix.
/// Eigenvalues below -1e-8*trace/m reject the matrix; small negatives and
/// values under 1e-10*trace are clamped to zero.
inline MatrixXd psd_sqrt_factor(const MatrixXd& cov, const std::string& who) {
  if (cov.rows() != cov.cols()) throw std::invalid_argument(who + ": covariance must be square");
  if (!is_symmetric(cov)) throw std::invalid_argument(who + ": covariance not symmetric");
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(cov);
  if (es.info() != Eigen::Success) throw std::runtime_error(who + ": eigendecomposition failed");
  const double trace = std::abs(cov.trace());
  const double m = static_cast<double>(cov.rows());
  const double reject_floor = -1e-8 * trace / m;
  const double clamp_tol = 1e-10 * trace;
  VectorXd lambda = es.eigenvalues();
  for (Index i = 0; i < lambda.size(); ++i) {
    if (lambda(i) < reject_floor)
      throw std::invalid_argument(who + ": covariance is indefinite (eigenvalue " +
                                  std::to_string(lambda(i)) + ")");
    lambda(i) = lambda(i) <= clamp_tol ? 0.0 : lambda(i);
  }
  return es.eigenvectors() * lambda.cwiseSqrt().asDiagonal();
}

}  // namespace detail

/// Draws counts[k] points from N(mu_k, Sigma) per class; labels are the true
/// class ids, grouped by class in ascending order.
inline LabeledEmbeddings synth_gaussian(const GroundTruthModel& model, RandomStream& rng) {
  model.validate();
  const MatrixXd factor = detail::psd_sqrt_factor(model.shared_covariance, "synth_gaussian");
  const Index m = model.dim();
  const Index n = model.total_count();

  LabeledEmbeddings out;
  out.dim = m;
  out.num_classes = model.num_classes();
  out.vectors.resize(n, m);
  out.labels.resize(static_cast<std::size_t>(n));

  Index row = 0;
  VectorXd u(m);
  for (int k = 0; k < model.num_classes(); ++k) {
    RandomStream stream = rng.child(static_cast<std::uint64_t>(k));
    for (Index c = 0; c < model.counts[static_cast<std::size_t>(k)]; ++c) {
      for (Index j = 0; j < m; ++j) u(j) = stream.normal();
      out.vectors.row(row) = (model.means.row(k).transpose() + factor * u).transpose();
      out.labels[static_cast<std::size_t>(row)] = k;
      ++row;
    }
  }
  out.validate();
  return out;
}

}  // namespace calibre
