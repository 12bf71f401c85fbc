#include "calibre/train.hpp"

#include "calibre/simulate.hpp"
#include "support/helpers.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <vector>

using namespace calibre;

namespace {

MatrixXd random_simplex_targets(RandomStream& rng, Index rows, Index k) {
  MatrixXd t(rows, k);
  for (Index i = 0; i < rows; ++i) {
    double sum = 0.0;
    for (Index c = 0; c < k; ++c) {
      t(i, c) = rng.uniform_open01();
      sum += t(i, c);
    }
    t.row(i) /= sum;
  }
  return t;
}

ProbeModel random_model(RandomStream& rng, Index m, int k, double beta) {
  ProbeModel model = ProbeModel::identity_init(m, k, beta, 1.0);
  model.adapter += 0.3 * test_helpers::random_matrix(rng, m, m);
  model.adapter_bias = 0.3 * test_helpers::random_matrix(rng, m, 1).col(0);
  model.head = test_helpers::random_matrix(rng, k, m);
  model.head_bias = test_helpers::random_matrix(rng, k, 1).col(0);
  return model;
}

double loss_of(const ProbeModel& model, const MatrixXd& x, const MatrixXd& t, const MatrixXd& a) {
  return loss_total(model, x, t, a).first;
}

/// Central finite differences over every parameter entry.
void check_gradients(ProbeModel model, const MatrixXd& x, const MatrixXd& t, const MatrixXd& a) {
  const double h = 1e-5;
  const auto [loss, grad] = loss_total(model, x, t, a);
  ASSERT_TRUE(std::isfinite(loss));

  auto check_entry = [&](double& param, double analytic) {
    const double saved = param;
    param = saved + h;
    const double up = loss_of(model, x, t, a);
    param = saved - h;
    const double down = loss_of(model, x, t, a);
    param = saved;
    const double fd = (up - down) / (2.0 * h);
    const double denom = std::max({1.0, std::abs(analytic), std::abs(fd)});
    EXPECT_LT(std::abs(analytic - fd) / denom, 1e-5)
        << "analytic " << analytic << " vs fd " << fd;
  };

  for (Index i = 0; i < model.head.rows(); ++i)
    for (Index j = 0; j < model.head.cols(); ++j) check_entry(model.head(i, j), grad.head(i, j));
  for (Index i = 0; i < model.head_bias.size(); ++i)
    check_entry(model.head_bias(i), grad.head_bias(i));
  if (model.has_adapter) {
    for (Index i = 0; i < model.adapter.rows(); ++i)
      for (Index j = 0; j < model.adapter.cols(); ++j)
        check_entry(model.adapter(i, j), grad.adapter(i, j));
    for (Index i = 0; i < model.adapter_bias.size(); ++i)
      check_entry(model.adapter_bias(i), grad.adapter_bias(i));
  }
}

}  // namespace

TEST(MixupPair, Endpoints) {
  VectorXd x0(2), x1(2), y0(2), y1(2);
  x0 << 1, 2;
  x1 << -3, 4;
  y0 << 1, 0;
  y1 << 0, 1;
  auto [xa, ya] = mixup_pair(x0, y0, x1, y1, 1.0);
  EXPECT_EQ(xa, x0);
  EXPECT_EQ(ya, y0);
  auto [xb, yb] = mixup_pair(x0, y0, x1, y1, 0.0);
  EXPECT_EQ(xb, x1);
  EXPECT_EQ(yb, y1);
}

TEST(MixupPair, MidpointTarget) {
  VectorXd x0 = VectorXd::Zero(2), x1 = VectorXd::Ones(2);
  VectorXd y0(2), y1(2);
  y0 << 1, 0;
  y1 << 0, 1;
  auto [x, y] = mixup_pair(x0, y0, x1, y1, 0.5);
  EXPECT_DOUBLE_EQ(y(0), 0.5);
  EXPECT_DOUBLE_EQ(y(1), 0.5);
}

TEST(MixupPair, TargetsStayOnSimplex) {
  RandomStream rng = seeded_rng(111, "mixup");
  for (int rep = 0; rep < 200; ++rep) {
    const Index k = 3;
    const MatrixXd t = random_simplex_targets(rng, 2, k);
    const VectorXd x0 = test_helpers::random_matrix(rng, 2, 1).col(0);
    const VectorXd x1 = test_helpers::random_matrix(rng, 2, 1).col(0);
    auto [x, y] = mixup_pair(x0, t.row(0).transpose(), x1, t.row(1).transpose(), rng.uniform01());
    EXPECT_NEAR(y.sum(), 1.0, 1e-12);
    EXPECT_GE(y.minCoeff(), 0.0);
  }
}

TEST(MixupPair, RejectsLambdaOutsideUnitInterval) {
  VectorXd v = VectorXd::Zero(2);
  EXPECT_THROW(mixup_pair(v, v, v, v, 1.5), std::invalid_argument);
  EXPECT_THROW(mixup_pair(v, v, v, v, -0.1), std::invalid_argument);
}

TEST(LossTotal, IdentityAdapterHasZeroRegularizer) {
  RandomStream rng = seeded_rng(112, "loss");
  const Index m = 3;
  ProbeModel model = ProbeModel::identity_init(m, 2, 5.0, 1.0);
  model.head = test_helpers::random_matrix(rng, 2, m);
  const MatrixXd x = test_helpers::random_matrix(rng, 4, m);
  const MatrixXd t = random_simplex_targets(rng, 4, 2);

  const double with_reg = loss_total(model, x, t, x).first;
  model.beta = 0.0;
  const double without_reg = loss_total(model, x, t, x).first;
  EXPECT_EQ(with_reg, without_reg);
}

TEST(LossTotal, UniformSoftmaxGivesLogK) {
  const Index m = 4;
  const int k = 5;
  ProbeModel model = ProbeModel::identity_init(m, k, 0.0, 1.0);
  RandomStream rng = seeded_rng(113, "loss");
  const MatrixXd x = test_helpers::random_matrix(rng, 6, m);
  const MatrixXd t = random_simplex_targets(rng, 6, k);
  EXPECT_NEAR(loss_total(model, x, t, x).first, std::log(5.0), 1e-12);
}

TEST(LossTotal, RejectsOffSimplexTargets) {
  ProbeModel model = ProbeModel::identity_init(2, 2, 0.0, 1.0);
  const MatrixXd x = MatrixXd::Zero(1, 2);
  MatrixXd t(1, 2);
  t << 0.7, 0.7;
  EXPECT_THROW(loss_total(model, x, t, x), std::invalid_argument);
}

TEST(LossTotal, GradientsMatchFiniteDifferences) {
  RandomStream rng = seeded_rng(114, "grad");
  for (int rep = 0; rep < 30; ++rep) {
    const Index m = 2 + static_cast<Index>(rng.below(4));
    const int k = 2 + static_cast<int>(rng.below(3));
    const Index batch = 2 + static_cast<Index>(rng.below(6));
    const double beta = std::vector<double>{0.0, 0.3, 2.0}[rng.below(3)];
    ProbeModel model = random_model(rng, m, k, beta);
    const MatrixXd x = test_helpers::random_matrix(rng, batch, m);
    const MatrixXd t = random_simplex_targets(rng, batch, k);
    const MatrixXd a = test_helpers::random_matrix(rng, batch, m);
    check_gradients(model, x, t, a);
  }
}

TEST(LossTotal, GradientsMatchWithoutAdapter) {
  RandomStream rng = seeded_rng(115, "grad");
  ProbeModel model = random_model(rng, 3, 3, 0.0);
  model.has_adapter = false;
  const MatrixXd x = test_helpers::random_matrix(rng, 5, 3);
  const MatrixXd t = random_simplex_targets(rng, 5, 3);
  check_gradients(model, x, t, x);
}

namespace {

LabeledEmbeddings separable_two_class(RandomStream& rng, Index per_class) {
  LabeledEmbeddings data;
  data.dim = 2;
  data.num_classes = 2;
  data.vectors.resize(2 * per_class, 2);
  data.labels.assign(static_cast<std::size_t>(2 * per_class), 0);
  for (Index i = 0; i < per_class; ++i) {
    data.vectors.row(i) << -2.0 + 0.1 * rng.normal(), 0.1 * rng.normal();
    data.vectors.row(per_class + i) << 2.0 + 0.1 * rng.normal(), 0.1 * rng.normal();
    data.labels[static_cast<std::size_t>(per_class + i)] = 1;
  }
  return data;
}

}  // namespace

TEST(TrainProbe, SeparableDataReachesPerfectAccuracy) {
  RandomStream data_rng = seeded_rng(116, "data");
  const LabeledEmbeddings data = separable_two_class(data_rng, 50);

  TrainConfig cfg;
  cfg.epochs = 200;
  cfg.batch_size = 25;
  cfg.learning_rate = 0.1;
  cfg.beta = 0.0;
  cfg.use_mixup = false;
  cfg.use_adapter = false;
  RandomStream rng = seeded_rng(116, "train");
  const TrainResult result = train_probe(data, nullptr, nullptr, cfg, rng);

  Index correct = 0;
  for (Index i = 0; i < data.size(); ++i)
    correct += result.model.predict(data.vectors.row(i).transpose()) ==
               data.labels[static_cast<std::size_t>(i)];
  EXPECT_EQ(correct, data.size());
}

TEST(TrainProbe, ConvexCaseLossMonotoneWithSmallStep) {
  RandomStream data_rng = seeded_rng(117, "data");
  const LabeledEmbeddings data = test_helpers::random_dataset(data_rng, 80, 3, 3);

  TrainConfig cfg;
  cfg.epochs = 60;
  cfg.batch_size = 80;  // full batch: plain gradient descent
  cfg.learning_rate = 0.2;
  cfg.momentum = 0.0;
  cfg.beta = 0.0;
  cfg.use_mixup = false;
  cfg.use_adapter = false;
  cfg.lr_decay_at = {};
  RandomStream rng = seeded_rng(117, "train");
  const TrainResult result = train_probe(data, nullptr, nullptr, cfg, rng);
  for (std::size_t e = 1; e < result.epoch_loss.size(); ++e)
    EXPECT_LE(result.epoch_loss[e], result.epoch_loss[e - 1] + 1e-12) << "epoch " << e;
}

TEST(TrainProbe, HugeBetaPinsAdapterAtIdentity) {
  RandomStream data_rng = seeded_rng(118, "data");
  LabeledEmbeddings data = separable_two_class(data_rng, 64);
  data.vectors *= 0.5;

  TrainConfig cfg;
  cfg.epochs = 20000;
  cfg.batch_size = 64;
  cfg.learning_rate = 1e-6;
  cfg.beta = 1e6;
  cfg.use_mixup = false;
  cfg.lr_decay_at = {};
  RandomStream rng = seeded_rng(118, "train");
  const TrainResult result = train_probe(data, nullptr, nullptr, cfg, rng);
  const Index m = data.dim;
  EXPECT_LT((result.model.adapter - MatrixXd::Identity(m, m)).cwiseAbs().maxCoeff(), 1e-3);
  EXPECT_LT(result.model.adapter_bias.cwiseAbs().maxCoeff(), 1e-3);

  // contrast: without the regularizer the same schedule moves the adapter
  cfg.beta = 0.0;
  RandomStream rng2 = seeded_rng(118, "train");
  const TrainResult free = train_probe(data, nullptr, nullptr, cfg, rng2);
  EXPECT_GT((free.model.adapter - MatrixXd::Identity(m, m)).cwiseAbs().maxCoeff(), 1e-3);
}

TEST(TrainProbe, DeterministicWithFixedSeed) {
  RandomStream data_rng = seeded_rng(119, "data");
  const LabeledEmbeddings data = test_helpers::random_dataset(data_rng, 100, 3, 3);
  TrainConfig cfg;
  cfg.epochs = 10;
  cfg.batch_size = 32;
  RandomStream r1 = seeded_rng(3, "train");
  RandomStream r2 = seeded_rng(3, "train");
  const TrainResult a = train_probe(data, nullptr, nullptr, cfg, r1);
  const TrainResult b = train_probe(data, nullptr, nullptr, cfg, r2);
  EXPECT_EQ(a.model.adapter, b.model.adapter);
  EXPECT_EQ(a.model.head, b.model.head);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
}

TEST(TrainProbe, MixupRealOnlyRespectsMask) {
  // all rows synthetic: mixing is a no-op, results match mixup-off exactly
  RandomStream data_rng = seeded_rng(120, "data");
  const LabeledEmbeddings data = test_helpers::random_dataset(data_rng, 64, 2, 2);
  const std::vector<bool> all_synthetic(64, true);

  TrainConfig with_mixup;
  with_mixup.epochs = 5;
  with_mixup.batch_size = 16;
  with_mixup.use_mixup = true;
  TrainConfig no_mixup = with_mixup;
  no_mixup.use_mixup = false;

  RandomStream r1 = seeded_rng(6, "train");
  RandomStream r2 = seeded_rng(6, "train");
  const TrainResult a = train_probe(data, nullptr, &all_synthetic, with_mixup, r1);
  const TrainResult b = train_probe(data, nullptr, &all_synthetic, no_mixup, r2);
  EXPECT_EQ(a.epoch_loss, b.epoch_loss);
}

TEST(FisherClassify, NearestMeanUnderEqualPriors) {
  GroundTruthModel model;
  model.means.resize(2, 2);
  model.means << 1, 0, -1, 0;
  model.shared_covariance = MatrixXd::Identity(2, 2);
  model.counts = {100, 100};
  VectorXd z(2);
  z << 0.5, 0.0;
  EXPECT_EQ(fisher_classify(z, model), 0);
}

TEST(FisherClassify, PriorBreaksEquidistantTie) {
  GroundTruthModel model;
  model.means.resize(2, 2);
  model.means << 1, 0, -1, 0;
  model.shared_covariance = MatrixXd::Identity(2, 2);
  model.counts = {300, 100};
  const VectorXd z = VectorXd::Zero(2);  // equidistant
  EXPECT_EQ(fisher_classify(z, model), 0);
}

TEST(FisherClassify, ExactTieGoesToLowerClassId) {
  GroundTruthModel model;
  model.means.resize(2, 2);
  model.means << 1, 0, -1, 0;
  model.shared_covariance = MatrixXd::Identity(2, 2);
  model.counts = {100, 100};
  EXPECT_EQ(fisher_classify(VectorXd::Zero(2), model), 0);
}

TEST(FisherClassify, BeatsNearestMeanOnSkewedPriors) {
  GroundTruthModel model;
  model.means.resize(3, 2);
  model.means << 1.2, 0, -1.2, 0.3, 0, 1.2;
  MatrixXd cov(2, 2);
  cov << 1.0, 0.6, 0.6, 1.0;
  model.shared_covariance = cov;
  model.counts = {800, 150, 50};

  RandomStream rng = seeded_rng(121, "draw");
  GroundTruthModel test_model = model;
  test_model.counts = {8000, 1500, 500};  // test draws follow the priors
  const LabeledEmbeddings test = synth_gaussian(test_model, rng);

  Index fisher_correct = 0, nm_correct = 0;
  for (Index i = 0; i < test.size(); ++i) {
    const VectorXd z = test.vectors.row(i).transpose();
    const int truth = test.labels[static_cast<std::size_t>(i)];
    fisher_correct += fisher_classify(z, model) == truth;
    int nearest = 0;
    for (int k = 1; k < 3; ++k)
      if ((z - model.means.row(k).transpose()).norm() <
          (z - model.means.row(nearest).transpose()).norm())
        nearest = k;
    nm_correct += nearest == truth;
  }
  EXPECT_GE(fisher_correct, nm_correct);
}

TEST(FisherClassify, InvariantUnderAffineChangeOfCoordinates) {
  RandomStream rng = seeded_rng(122, "affine");
  GroundTruthModel model;
  model.means = test_helpers::random_matrix(rng, 3, 3);
  model.shared_covariance = test_helpers::random_psd(rng, 3, 0.5, 2.0);
  model.counts = {500, 200, 50};

  MatrixXd a;
  do {
    a = test_helpers::random_matrix(rng, 3, 3);
  } while (std::abs(a.determinant()) < 0.1);
  const VectorXd b = test_helpers::random_matrix(rng, 3, 1).col(0);

  GroundTruthModel moved;
  moved.means = (model.means * a.transpose()).rowwise() + b.transpose();
  const MatrixXd cov = a * model.shared_covariance * a.transpose();
  moved.shared_covariance = 0.5 * (cov + cov.transpose());
  moved.counts = model.counts;

  for (int rep = 0; rep < 100; ++rep) {
    const VectorXd z = test_helpers::random_matrix(rng, 3, 1).col(0);
    EXPECT_EQ(fisher_classify(z, model), fisher_classify(a * z + b, moved));
  }
}

TEST(ContrastiveLoss, SinglePositiveQueueIsZero) {
  VectorXd q(2), k(2);
  q << 1, 0;
  k << 0.5, 0.5;
  EXPECT_DOUBLE_EQ(contrastive_loss(q, k, {k}, 0.7), 0.0);
}

TEST(ContrastiveLoss, TwoEqualKeysGiveLogTwo) {
  VectorXd q(2), k1(2), k2(2);
  q << 1, 0;
  k1 << 0.3, 1.0;
  k2 << 0.3, -2.0;  // same dot product with q
  EXPECT_NEAR(contrastive_loss(q, k1, {k1, k2}, 0.5), std::log(2.0), 1e-12);
}

TEST(ContrastiveLoss, VanishesAsTemperatureShrinks) {
  VectorXd q(2), pos(2), n1(2), n2(2);
  q << 1, 0;
  pos << 1, 0;
  n1 << 0, 1;
  n2 << 0, -1;
  EXPECT_LT(contrastive_loss(q, pos, {pos, n1, n2}, 1e-3), 1e-9);
}

TEST(ContrastiveLoss, NonNegativeWhenPositiveInQueue) {
  RandomStream rng = seeded_rng(123, "queue");
  for (int rep = 0; rep < 100; ++rep) {
    const VectorXd q = test_helpers::random_matrix(rng, 3, 1).col(0);
    std::vector<VectorXd> queue;
    for (int i = 0; i < 5; ++i) queue.push_back(test_helpers::random_matrix(rng, 3, 1).col(0));
    const double loss = contrastive_loss(q, queue[2], queue, 0.3);
    EXPECT_GE(loss, 0.0);
  }
}

TEST(ContrastiveLoss, RejectsNonPositiveTemperature) {
  VectorXd v = VectorXd::Ones(2);
  EXPECT_THROW(contrastive_loss(v, v, {v}, 0.0), std::invalid_argument);
}
