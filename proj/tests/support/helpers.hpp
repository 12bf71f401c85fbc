#pragma once

#include "calibre/rng.hpp"
#include "calibre/types.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <string>

namespace test_helpers {

inline Eigen::MatrixXd random_matrix(calibre::RandomStream& rng, Eigen::Index rows,
                                     Eigen::Index cols, double scale = 1.0) {
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r)
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = scale * rng.normal();
  return m;
}

/// Random PSD matrix Q diag(evals) Q^T with eigenvalues in [lo, hi],
/// symmetrized so the entries match exactly.
inline Eigen::MatrixXd random_psd(calibre::RandomStream& rng, Eigen::Index m, double lo,
                                  double hi) {
  const Eigen::MatrixXd a = random_matrix(rng, m, m);
  const Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  const Eigen::MatrixXd q = qr.householderQ();
  Eigen::VectorXd evals(m);
  for (Eigen::Index i = 0; i < m; ++i) evals(i) = lo + (hi - lo) * rng.uniform01();
  const Eigen::MatrixXd psd = q * evals.asDiagonal() * q.transpose();
  return 0.5 * (psd + psd.transpose());
}

inline calibre::LabeledEmbeddings random_dataset(calibre::RandomStream& rng, Eigen::Index n,
                                                 Eigen::Index dim, int num_classes) {
  calibre::LabeledEmbeddings data;
  data.dim = dim;
  data.num_classes = num_classes;
  data.vectors = random_matrix(rng, n, dim);
  data.labels.resize(static_cast<std::size_t>(n));
  for (auto& label : data.labels)
    label = static_cast<int>(rng.below(static_cast<std::uint64_t>(num_classes)));
  return data;
}

inline std::string temp_path(const std::string& name) {
  return (std::filesystem::path(::testing::TempDir()) / name).string();
}

inline void write_file(const std::string& path, const std::string& contents) {
  std::ofstream out(path);
  out << contents;
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace test_helpers
