#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace calibre {

using Eigen::Index;
using Eigen::MatrixXd;
using Eigen::VectorXd;

/// Embedding vectors with (possibly noisy) integer class labels.
/// One row of `vectors` per instance.
struct LabeledEmbeddings {
  Index dim = 0;
  Index num_classes = 0;
  MatrixXd vectors;         // n x dim
  std::vector<int> labels;  // size n

  Index size() const { return vectors.rows(); }

  void validate() const {
    if (dim < 1) throw std::invalid_argument("LabeledEmbeddings: dim must be >= 1");
    if (num_classes < 1) throw std::invalid_argument("LabeledEmbeddings: num_classes must be >= 1");
    if (vectors.rows() < 1) throw std::invalid_argument("LabeledEmbeddings: need at least one vector");
    if (vectors.cols() != dim)
      throw std::invalid_argument("LabeledEmbeddings: vector width does not match dim");
    if (static_cast<Index>(labels.size()) != vectors.rows())
      throw std::invalid_argument("LabeledEmbeddings: labels and vectors differ in length");
    if (!vectors.allFinite())
      throw std::invalid_argument("LabeledEmbeddings: non-finite entry in vectors");
    for (std::size_t i = 0; i < labels.size(); ++i) {
      if (labels[i] < 0 || labels[i] >= num_classes)
        throw std::invalid_argument("LabeledEmbeddings: label out of range at row " +
                                    std::to_string(i));
    }
  }

  /// Per-class member row indices, in ascending row order.
  std::vector<std::vector<Index>> class_indices() const {
    std::vector<std::vector<Index>> groups(static_cast<std::size_t>(num_classes));
    for (Index i = 0; i < size(); ++i)
      groups[static_cast<std::size_t>(labels[static_cast<std::size_t>(i)])].push_back(i);
    return groups;
  }

  std::vector<Index> class_counts() const {
    std::vector<Index> counts(static_cast<std::size_t>(num_classes), 0);
    for (int label : labels) ++counts[static_cast<std::size_t>(label)];
    return counts;
  }
};

/// First and second moments of one class, estimated from `count` members.
struct ClassStats {
  int class_id = -1;
  Index count = 0;
  VectorXd mean;
  MatrixXd covariance;
};

inline bool is_symmetric(const MatrixXd& a, double tol = 1e-9) {
  return (a - a.transpose()).cwiseAbs().maxCoeff() <= tol;
}

/// Eigenvalue floor check: all eigenvalues >= -1e-8 * trace / m.
inline bool is_psd(const MatrixXd& a) {
  if (a.rows() == 0) return true;
  Eigen::SelfAdjointEigenSolver<MatrixXd> es(a, Eigen::EigenvaluesOnly);
  const double floor = -1e-8 * std::abs(a.trace()) / static_cast<double>(a.rows());
  return es.eigenvalues().minCoeff() >= floor;
}

/// Long-tail corruption parameters: imbalance ratio rho, noise rate eta.
struct CorruptionSpec {
  double imbalance_ratio = 10.0;  // rho > 1
  double noise_rate = 0.0;        // eta in [0,1)
  int num_classes = 0;            // K
  Index base_count = 0;           // size of the largest class before decay

  /// Per-step decay v = rho^(-1/(K-1)), in (0,1).
  double decay() const {
    return std::pow(imbalance_ratio, -1.0 / static_cast<double>(num_classes - 1));
  }

  void validate() const {
    if (num_classes < 2) throw std::invalid_argument("CorruptionSpec: num_classes must be >= 2");
    if (!(imbalance_ratio > 1.0))
      throw std::invalid_argument("CorruptionSpec: imbalance_ratio must be > 1");
    if (!(noise_rate >= 0.0 && noise_rate < 1.0))
      throw std::invalid_argument("CorruptionSpec: noise_rate must be in [0,1)");
    if (base_count < num_classes)
      throw std::invalid_argument("CorruptionSpec: base_count must be >= num_classes");
  }
};

enum class Disturbance { kOnes, kIdentity };

/// Knobs for LOF filtering and tail-class calibration.
struct CalibrationConfig {
  int q = 3;                   // donor head classes per tail class
  double gamma = 0.5;          // confidence on head statistics
  double alpha = 0.01;         // covariance disturbance strength
  int lof_neighbors = 20;      // k for LOF
  double lof_threshold = 1.5;  // LOF score cutoff
  double head_mass = 0.5;      // head classes cover at least this training mass

  Disturbance disturbance = Disturbance::kOnes;
  bool invert_weights = false;

  void validate() const {
    if (q < 1) throw std::invalid_argument("CalibrationConfig: q must be >= 1");
    if (!(gamma >= 0.0 && gamma <= 1.0))
      throw std::invalid_argument("CalibrationConfig: gamma must be in [0,1]");
    if (!(alpha >= 0.0)) throw std::invalid_argument("CalibrationConfig: alpha must be >= 0");
    if (lof_neighbors < 1)
      throw std::invalid_argument("CalibrationConfig: lof_neighbors must be >= 1");
    if (!(lof_threshold > 0.0))
      throw std::invalid_argument("CalibrationConfig: lof_threshold must be > 0");
    if (!(head_mass > 0.0 && head_mass <= 1.0))
      throw std::invalid_argument("CalibrationConfig: head_mass must be in (0,1]");
  }
};

/// True class-conditional Gaussians (shared covariance) with class sizes.
struct GroundTruthModel {
  MatrixXd means;              // K x m, one row per class
  MatrixXd shared_covariance;  // m x m PSD
  std::vector<Index> counts;   // K entries, all >= 1

  int num_classes() const { return static_cast<int>(means.rows()); }
  Index dim() const { return means.cols(); }
  Index total_count() const {
    Index n = 0;
    for (Index c : counts) n += c;
    return n;
  }

  void validate() const {
    if (means.rows() < 1) throw std::invalid_argument("GroundTruthModel: need at least one class");
    if (static_cast<Index>(counts.size()) != means.rows())
      throw std::invalid_argument("GroundTruthModel: counts size does not match means");
    if (shared_covariance.rows() != means.cols() || shared_covariance.cols() != means.cols())
      throw std::invalid_argument("GroundTruthModel: covariance shape does not match dim");
    if (!is_symmetric(shared_covariance))
      throw std::invalid_argument("GroundTruthModel: covariance not symmetric");
    for (Index c : counts)
      if (c < 1) throw std::invalid_argument("GroundTruthModel: every class count must be >= 1");
  }
};

}  // namespace calibre
