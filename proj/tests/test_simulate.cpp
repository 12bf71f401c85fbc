#include "calibre/simulate.hpp"

#include "support/helpers.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <set>
#include <string>
#include <vector>

using namespace calibre;

TEST(LongtailCounts, DecayFormula) {
  CorruptionSpec spec;
  spec.num_classes = 10;
  spec.base_count = 5000;
  spec.imbalance_ratio = 10.0;
  const auto counts = longtail_counts(spec);
  EXPECT_EQ(counts[0], 5000);
  EXPECT_EQ(counts[9], 500);
  for (std::size_t k = 1; k < counts.size(); ++k) EXPECT_LE(counts[k], counts[k - 1]);
}

TEST(LongtailCounts, TwoClassEndpoint) {
  CorruptionSpec spec;
  spec.num_classes = 2;
  spec.base_count = 100;
  spec.imbalance_ratio = 100.0;
  const auto counts = longtail_counts(spec);
  EXPECT_EQ(counts, (std::vector<Index>{100, 1}));
}

TEST(LongtailCounts, DegenerateRatio) {
  CorruptionSpec spec;
  spec.num_classes = 5;
  spec.base_count = 100;
  spec.imbalance_ratio = 1.0 + 1e-9;
  for (Index c : longtail_counts(spec)) EXPECT_EQ(c, 100);
}

// Rounding the smallest class to an integer bounds the ratio error by
// 0.5 / round(base/rho), so the 2% guarantee needs base >= 25 * rho; the
// draws below stay in that regime (base >= 1000 alone cannot guarantee it,
// e.g. base=1050, rho=100 rounds 10.5 -> 10, a 5% ratio shift).
TEST(LongtailCounts, RatioWithinTwoPercent) {
  RandomStream rng = seeded_rng(21, "ratio");
  for (int rep = 0; rep < 50; ++rep) {
    CorruptionSpec spec;
    spec.num_classes = 2 + static_cast<int>(rng.below(30));
    spec.imbalance_ratio = 2.0 + 98.0 * rng.uniform01();
    spec.base_count = std::max<Index>(1000, static_cast<Index>(25.0 * spec.imbalance_ratio)) +
                      static_cast<Index>(rng.below(9000));
    const auto counts = longtail_counts(spec);
    const double ratio =
        static_cast<double>(counts.front()) / static_cast<double>(counts.back());
    EXPECT_NEAR(ratio / spec.imbalance_ratio, 1.0, 0.02)
        << "K=" << spec.num_classes << " rho=" << spec.imbalance_ratio;
  }
}

TEST(LongtailCounts, RejectsBadParameters) {
  CorruptionSpec spec;
  spec.num_classes = 1;
  spec.base_count = 10;
  spec.imbalance_ratio = 10.0;
  EXPECT_THROW(longtail_counts(spec), std::invalid_argument);
  spec.num_classes = 3;
  spec.imbalance_ratio = 1.0;
  EXPECT_THROW(longtail_counts(spec), std::invalid_argument);
  spec.imbalance_ratio = 10.0;
  spec.base_count = 2;
  EXPECT_THROW(longtail_counts(spec), std::invalid_argument);
}

TEST(SubsampleLongtail, FullCountsGivePermutation) {
  RandomStream rng = seeded_rng(31, "subsample");
  const LabeledEmbeddings data = test_helpers::random_dataset(rng, 60, 3, 3);
  const auto counts = data.class_counts();
  RandomStream sub = seeded_rng(31, "draw");
  const LabeledEmbeddings out = subsample_longtail(data, counts, sub);
  ASSERT_EQ(out.size(), data.size());

  // multiset equality of rows
  auto key = [](const LabeledEmbeddings& d, Index i) {
    std::string s = std::to_string(d.labels[static_cast<std::size_t>(i)]);
    for (Index j = 0; j < d.dim; ++j) s += "," + std::to_string(d.vectors(i, j));
    return s;
  };
  std::multiset<std::string> a, b;
  for (Index i = 0; i < data.size(); ++i) {
    a.insert(key(data, i));
    b.insert(key(out, i));
  }
  EXPECT_EQ(a, b);
}

TEST(SubsampleLongtail, HistogramMatchesRequest) {
  LabeledEmbeddings data;
  data.dim = 1;
  data.num_classes = 2;
  data.vectors = MatrixXd::Zero(8, 1);
  data.labels = {0, 0, 0, 0, 1, 1, 1, 1};
  RandomStream rng = seeded_rng(32, "draw");
  const LabeledEmbeddings out = subsample_longtail(data, {2, 1}, rng);
  EXPECT_EQ(out.size(), 3);
  EXPECT_EQ(out.class_counts(), (std::vector<Index>{2, 1}));
}

TEST(SubsampleLongtail, DeterministicSelection) {
  RandomStream rng = seeded_rng(33, "data");
  const LabeledEmbeddings data = test_helpers::random_dataset(rng, 50, 2, 2);
  const auto counts = data.class_counts();
  std::vector<Index> want = {counts[0] / 2, counts[1] / 2};
  RandomStream r1 = seeded_rng(5, "sub");
  RandomStream r2 = seeded_rng(5, "sub");
  const LabeledEmbeddings a = subsample_longtail(data, want, r1);
  const LabeledEmbeddings b = subsample_longtail(data, want, r2);
  EXPECT_EQ(a.labels, b.labels);
  EXPECT_EQ(a.vectors, b.vectors);
}

TEST(SubsampleLongtail, RejectsOverdraw) {
  RandomStream rng = seeded_rng(34, "data");
  const LabeledEmbeddings data = test_helpers::random_dataset(rng, 10, 2, 2);
  auto counts = data.class_counts();
  counts[0] += 1;
  RandomStream sub = seeded_rng(34, "sub");
  EXPECT_THROW(subsample_longtail(data, counts, sub), std::invalid_argument);
}

TEST(BuildTransition, DirectSubstitution) {
  const TransitionMatrix t = build_transition({100, 50, 50}, 0.3);
  EXPECT_NEAR(t.entries(0, 0), 0.7, 1e-15);
  EXPECT_NEAR(t.entries(0, 1), 0.15, 1e-15);
  EXPECT_NEAR(t.entries(0, 2), 0.15, 1e-15);
}

TEST(BuildTransition, ZeroNoiseIsIdentity) {
  const TransitionMatrix t = build_transition({10, 20, 30}, 0.0);
  EXPECT_TRUE(t.entries.isApprox(MatrixXd::Identity(3, 3)));
}

TEST(BuildTransition, SymmetricTwoClass) {
  const TransitionMatrix t = build_transition({50, 50}, 0.2);
  EXPECT_NEAR(t.entries(0, 1), 0.2, 1e-15);
  EXPECT_NEAR(t.entries(1, 0), 0.2, 1e-15);
}

TEST(BuildTransition, RejectsEtaAtOne) {
  EXPECT_THROW(build_transition({10, 10}, 1.0), std::invalid_argument);
  EXPECT_THROW(build_transition({10, 10}, -0.1), std::invalid_argument);
}

TEST(BuildTransition, RowSumsAndOffDiagonalProportionality) {
  RandomStream rng = seeded_rng(41, "transition");
  for (int rep = 0; rep < 100; ++rep) {
    const int k = 2 + static_cast<int>(rng.below(9));
    std::vector<Index> counts(static_cast<std::size_t>(k));
    for (auto& c : counts) c = 1 + static_cast<Index>(rng.below(1000));
    const double eta = 0.95 * rng.uniform01();
    const TransitionMatrix t = build_transition(counts, eta);

    for (Index i = 0; i < t.entries.rows(); ++i) {
      EXPECT_NEAR(t.entries.row(i).sum(), 1.0, 1e-12);
      EXPECT_NEAR(t.entries(i, i), 1.0 - eta, 1e-15);
      if (eta == 0.0) continue;
      for (Index j = 0; j < t.entries.cols(); ++j) {
        for (Index l = 0; l < t.entries.cols(); ++l) {
          if (j == i || l == i || eta == 0.0) continue;
          const double lhs = t.entries(i, j) * static_cast<double>(counts[static_cast<std::size_t>(l)]);
          const double rhs = t.entries(i, l) * static_cast<double>(counts[static_cast<std::size_t>(j)]);
          EXPECT_NEAR(lhs, rhs, 1e-12 * std::max(1.0, std::abs(lhs)));
        }
      }
    }
  }
}

TEST(InjectNoise, ZeroNoiseKeepsLabels) {
  RandomStream rng = seeded_rng(51, "data");
  const LabeledEmbeddings data = test_helpers::random_dataset(rng, 100, 2, 3);
  const TransitionMatrix t = build_transition(data.class_counts(), 0.0);
  RandomStream noise = seeded_rng(51, "noise");
  const auto [noisy, clean] = inject_noise(data, t, noise);
  EXPECT_EQ(noisy.labels, data.labels);
  EXPECT_EQ(clean, data.labels);
  EXPECT_EQ(noisy.vectors, data.vectors);
}

TEST(InjectNoise, FlipFractionWithinThreeSigma) {
  LabeledEmbeddings data;
  data.dim = 1;
  data.num_classes = 2;
  const Index n = 10000;
  data.vectors = MatrixXd::Zero(n, 1);
  data.labels.resize(static_cast<std::size_t>(n));
  for (Index i = 0; i < n; ++i) data.labels[static_cast<std::size_t>(i)] = i < n / 2 ? 0 : 1;

  const TransitionMatrix t = build_transition({5000, 5000}, 0.4);
  RandomStream noise = seeded_rng(52, "noise");
  const auto [noisy, clean] = inject_noise(data, t, noise);
  Index flips = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) flips += noisy.labels[i] != clean[i];
  const double frac = static_cast<double>(flips) / static_cast<double>(n);
  const double sigma = std::sqrt(0.4 * 0.6 / static_cast<double>(n));
  EXPECT_NEAR(frac, 0.4, 3.0 * sigma);
}

TEST(InjectNoise, Deterministic) {
  RandomStream rng = seeded_rng(53, "data");
  const LabeledEmbeddings data = test_helpers::random_dataset(rng, 200, 2, 4);
  const TransitionMatrix t = build_transition(data.class_counts(), 0.3);
  RandomStream n1 = seeded_rng(9, "noise");
  RandomStream n2 = seeded_rng(9, "noise");
  EXPECT_EQ(inject_noise(data, t, n1).first.labels, inject_noise(data, t, n2).first.labels);
}

// Chi-squared goodness of fit of the empirical flip pair frequencies against
// the transition law, at n = 1e5 and significance 0.01.
TEST(InjectNoise, ChiSquaredGoodnessOfFit) {
  const std::vector<Index> proportions = {40, 30, 20, 10};
  const Index n = 100000;
  LabeledEmbeddings data;
  data.dim = 1;
  data.num_classes = 4;
  data.vectors = MatrixXd::Zero(n, 1);
  data.labels.reserve(static_cast<std::size_t>(n));
  for (std::size_t k = 0; k < proportions.size(); ++k)
    for (Index i = 0; i < n * proportions[k] / 100; ++i)
      data.labels.push_back(static_cast<int>(k));
  ASSERT_EQ(data.labels.size(), static_cast<std::size_t>(n));

  const auto counts = data.class_counts();
  const TransitionMatrix t = build_transition(counts, 0.35);
  RandomStream noise = seeded_rng(54, "noise");
  const auto [noisy, clean] = inject_noise(data, t, noise);

  MatrixXd observed = MatrixXd::Zero(4, 4);
  for (std::size_t i = 0; i < clean.size(); ++i)
    observed(clean[i], noisy.labels[i]) += 1.0;

  double chi2 = 0.0;
  int dof = 0;
  for (Index i = 0; i < 4; ++i) {
    for (Index j = 0; j < 4; ++j) {
      const double expected = static_cast<double>(counts[static_cast<std::size_t>(i)]) * t.entries(i, j);
      ASSERT_GE(expected, 5.0);
      chi2 += (observed(i, j) - expected) * (observed(i, j) - expected) / expected;
    }
    dof += 3;  // K-1 free cells per row
  }
  const boost::math::chi_squared dist(dof);
  EXPECT_LT(chi2, boost::math::quantile(dist, 0.99));
}

TEST(SynthGaussian, ZeroCovarianceCollapsesToMeans) {
  GroundTruthModel model;
  model.means = MatrixXd::Zero(2, 3);
  model.means << 1, 2, 3, -1, -2, -3;
  model.shared_covariance = MatrixXd::Zero(3, 3);
  model.counts = {4, 2};
  RandomStream rng = seeded_rng(61, "synth");
  const LabeledEmbeddings data = synth_gaussian(model, rng);
  ASSERT_EQ(data.size(), 6);
  for (Index i = 0; i < data.size(); ++i) {
    const int k = data.labels[static_cast<std::size_t>(i)];
    EXPECT_EQ(data.vectors.row(i), model.means.row(k));
  }
}

TEST(SynthGaussian, HistogramMatchesCounts) {
  GroundTruthModel model;
  model.means = MatrixXd::Zero(2, 2);
  model.shared_covariance = MatrixXd::Identity(2, 2);
  model.counts = {3, 2};
  RandomStream rng = seeded_rng(62, "synth");
  const LabeledEmbeddings data = synth_gaussian(model, rng);
  EXPECT_EQ(data.class_counts(), (std::vector<Index>{3, 2}));
}

TEST(SynthGaussian, SampleMeanWithinCltBound) {
  GroundTruthModel model;
  model.means = MatrixXd::Zero(2, 2);
  model.means << 3, -1, -2, 5;
  model.shared_covariance = MatrixXd::Identity(2, 2);
  model.counts = {10000, 10000};
  RandomStream rng = seeded_rng(63, "synth");
  const LabeledEmbeddings data = synth_gaussian(model, rng);

  for (int k = 0; k < 2; ++k) {
    VectorXd sum = VectorXd::Zero(2);
    Index cnt = 0;
    for (Index i = 0; i < data.size(); ++i) {
      if (data.labels[static_cast<std::size_t>(i)] != k) continue;
      sum += data.vectors.row(i).transpose();
      ++cnt;
    }
    const VectorXd mean = sum / static_cast<double>(cnt);
    const double bound = 4.0 * std::sqrt(2.0 / 10000.0);
    EXPECT_LT((mean - model.means.row(k).transpose()).norm(), bound);
  }
}

TEST(SynthGaussian, RejectsIndefiniteCovariance) {
  GroundTruthModel model;
  model.means = MatrixXd::Zero(1, 2);
  model.shared_covariance.resize(2, 2);
  model.shared_covariance << 1.0, 0.0, 0.0, -0.5;
  model.counts = {3};
  RandomStream rng = seeded_rng(64, "synth");
  EXPECT_THROW(synth_gaussian(model, rng), std::invalid_argument);
}
