#pragma once

#include "calibre/rng.hpp"
#include "calibre/types.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace calibre {

/// Linear probe: an identity-initialized affine adapter g(z0) = W z0 + b
/// followed by a linear head h(z) = U z + c. When `has_adapter` is false the
/// head acts on the raw vectors and the anchoring term is identically zero.
struct ProbeModel {
  MatrixXd adapter;       // m x m
  VectorXd adapter_bias;  // m
  MatrixXd head;          // K x m
  VectorXd head_bias;     // K
  double beta = 0.3;
  double mixup_alpha = 1.0;
  bool has_adapter = true;

  Index dim() const { return head.cols(); }
  int num_classes() const { return static_cast<int>(head.rows()); }

  static ProbeModel identity_init(Index m, int num_classes, double beta, double mixup_alpha,
                                  bool with_adapter = true) {
    ProbeModel p;
    p.adapter = MatrixXd::Identity(m, m);
    p.adapter_bias = VectorXd::Zero(m);
    p.head = MatrixXd::Zero(num_classes, m);
    p.head_bias = VectorXd::Zero(num_classes);
    p.beta = beta;
    p.mixup_alpha = mixup_alpha;
    p.has_adapter = with_adapter;
    return p;
  }

  /// Representations after the adapter; rows are instances.
  MatrixXd transform(const MatrixXd& inputs) const {
    if (!has_adapter) return inputs;
    return (inputs * adapter.transpose()).rowwise() + adapter_bias.transpose();
  }

  MatrixXd logits(const MatrixXd& inputs) const {
    return (transform(inputs) * head.transpose()).rowwise() + head_bias.transpose();
  }

  int predict(const VectorXd& z0) const {
    const MatrixXd l = logits(z0.transpose());
    int best = 0;
    for (int c = 1; c < num_classes(); ++c)
      if (l(0, c) > l(0, best)) best = c;
    return best;
  }
};

/// Convex combination of a pair of examples and their simplex targets.
inline std::pair<VectorXd, VectorXd> mixup_pair(const VectorXd& x_i, const VectorXd& y_i,
                                                const VectorXd& x_j, const VectorXd& y_j,
                                                double lambda) {
  if (!(lambda >= 0.0 && lambda <= 1.0))
    throw std::invalid_argument("mixup_pair: lambda must be in [0,1]");
  return {lambda * x_i + (1.0 - lambda) * x_j, lambda * y_i + (1.0 - lambda) * y_j};
}

struct LossGradients {
  MatrixXd adapter;
  VectorXd adapter_bias;
  MatrixXd head;
  VectorXd head_bias;
};

namespace train_detail {

/// Row-wise softmax with the usual max-shift.
inline MatrixXd softmax_rows(const MatrixXd& logits) {
  MatrixXd p = logits;
  for (Index i = 0; i < p.rows(); ++i) {
    const double mx = p.row(i).maxCoeff();
    p.row(i) = (p.row(i).array() - mx).exp();
    p.row(i) /= p.row(i).sum();
  }
  return p;
}

}  // namespace train_detail

/// Mean over the batch of soft-target cross entropy plus beta times the
/// squared distance between adapted and anchor representations. Returns the
/// scalar loss and analytic gradients for every parameter.
inline std::pair<double, LossGradients> loss_total(const ProbeModel& model, const MatrixXd& inputs,
                                                   const MatrixXd& targets,
                                                   const MatrixXd& anchors) {
  const Index batch = inputs.rows();
  if (batch == 0) throw std::invalid_argument("loss_total: empty batch");
  if (targets.rows() != batch || anchors.rows() != batch)
    throw std::invalid_argument("loss_total: inputs/targets/anchors row mismatch");
  for (Index i = 0; i < batch; ++i) {
    if (std::abs(targets.row(i).sum() - 1.0) > 1e-9 || targets.row(i).minCoeff() < -1e-12)
      throw std::invalid_argument("loss_total: target row " + std::to_string(i) +
                                  " is not on the simplex");
  }

  const MatrixXd z = model.transform(inputs);
  const MatrixXd logits = (z * model.head.transpose()).rowwise() + model.head_bias.transpose();
  if (!logits.allFinite()) throw std::runtime_error("loss_total: non-finite forward values");
  const MatrixXd p = train_detail::softmax_rows(logits);

  double ce = 0.0;
  for (Index i = 0; i < batch; ++i) {
    const double mx = logits.row(i).maxCoeff();
    const double lse = mx + std::log((logits.row(i).array() - mx).exp().sum());
    ce += lse - targets.row(i).dot(logits.row(i));  // targets sum to 1
  }
  double reg = 0.0;
  if (model.has_adapter) reg = (z - anchors).squaredNorm();
  const double inv_b = 1.0 / static_cast<double>(batch);
  const double loss = ce * inv_b + model.beta * reg * inv_b;

  LossGradients g;
  const MatrixXd dlogits = (p - targets) * inv_b;
  g.head = dlogits.transpose() * z;
  g.head_bias = dlogits.colwise().sum().transpose();
  if (model.has_adapter) {
    MatrixXd dz = dlogits * model.head;
    dz += (2.0 * model.beta * inv_b) * (z - anchors);
    g.adapter = dz.transpose() * inputs;
    g.adapter_bias = dz.colwise().sum().transpose();
  } else {
    g.adapter.resize(0, 0);
    g.adapter_bias.resize(0);
  }
  return {loss, std::move(g)};
}

struct TrainConfig {
  int epochs = 100;
  Index batch_size = 128;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double beta = 0.3;
  double mixup_alpha = 1.0;
  bool use_mixup = true;
  bool mixup_synthetic = false;  // synthetic points join mixing when true
  bool use_adapter = true;
  std::vector<double> lr_decay_at = {0.5, 0.75};  // fractions of epochs, x0.1 each
};

struct TrainResult {
  ProbeModel model;
  std::vector<double> epoch_loss;
};

/// Minibatch SGD with momentum on loss_total. Anchors default to the inputs
/// themselves; when mixup is on, mixed rows anchor at the mixed vectors.
/// `synthetic_mask` (optional) restricts mixing to real rows unless
/// cfg.mixup_synthetic is set.
inline TrainResult train_probe(const LabeledEmbeddings& data, const MatrixXd* anchors,
                               const std::vector<bool>* synthetic_mask, const TrainConfig& cfg,
                               RandomStream& rng) {
  data.validate();
  if (cfg.epochs < 1) throw std::invalid_argument("train_probe: epochs must be >= 1");
  if (cfg.batch_size < 1) throw std::invalid_argument("train_probe: batch_size must be >= 1");
  const Index n = data.size();
  const Index m = data.dim;
  const int num_classes = static_cast<int>(data.num_classes);
  if (anchors && (anchors->rows() != n || anchors->cols() != m))
    throw std::invalid_argument("train_probe: anchors shape does not match data");
  if (synthetic_mask && static_cast<Index>(synthetic_mask->size()) != n)
    throw std::invalid_argument("train_probe: synthetic mask does not match data");

  ProbeModel model =
      ProbeModel::identity_init(m, num_classes, cfg.beta, cfg.mixup_alpha, cfg.use_adapter);
  {
    RandomStream init = rng.child("init");
    for (Index r = 0; r < model.head.rows(); ++r)
      for (Index c = 0; c < model.head.cols(); ++c) model.head(r, c) = 0.01 * init.normal();
  }
  RandomStream shuffle_stream = rng.child("shuffle");
  RandomStream mixup_stream = rng.child("mixup");

  LossGradients vel;
  vel.adapter = MatrixXd::Zero(m, m);
  vel.adapter_bias = VectorXd::Zero(m);
  vel.head = MatrixXd::Zero(num_classes, m);
  vel.head_bias = VectorXd::Zero(num_classes);

  std::vector<Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);

  TrainResult result;
  result.epoch_loss.reserve(static_cast<std::size_t>(cfg.epochs));
  for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
    double lr = cfg.learning_rate;
    for (double frac : cfg.lr_decay_at)
      if (epoch >= static_cast<int>(frac * cfg.epochs)) lr *= 0.1;

    shuffle_stream.shuffle(order);
    double epoch_sum = 0.0;
    Index seen = 0;
    for (Index start = 0; start < n; start += cfg.batch_size) {
      const Index b = std::min<Index>(cfg.batch_size, n - start);
      MatrixXd x(b, m), t(b, num_classes), a(b, m);
      t.setZero();
      for (Index i = 0; i < b; ++i) {
        const Index row = order[static_cast<std::size_t>(start + i)];
        x.row(i) = data.vectors.row(row);
        t(i, data.labels[static_cast<std::size_t>(row)]) = 1.0;
        a.row(i) = anchors ? anchors->row(row) : data.vectors.row(row);
      }

      if (cfg.use_mixup && b >= 2) {
        std::vector<Index> mixable;
        for (Index i = 0; i < b; ++i) {
          const Index row = order[static_cast<std::size_t>(start + i)];
          const bool synthetic = synthetic_mask && (*synthetic_mask)[static_cast<std::size_t>(row)];
          if (!synthetic || cfg.mixup_synthetic) mixable.push_back(i);
        }
        if (mixable.size() >= 2) {
          const double lambda = mixup_stream.beta(cfg.mixup_alpha, cfg.mixup_alpha);
          std::vector<Index> partner = mixable;
          mixup_stream.shuffle(partner);
          const MatrixXd x0 = x, t0 = t;
          for (std::size_t i = 0; i < mixable.size(); ++i) {
            const Index self = mixable[i], other = partner[i];
            x.row(self) = lambda * x0.row(self) + (1.0 - lambda) * x0.row(other);
            t.row(self) = lambda * t0.row(self) + (1.0 - lambda) * t0.row(other);
          }
          a = x;  // mixed rows anchor at the mixed vector
        }
      }

      model.beta = cfg.beta;
      auto [loss, grad] = loss_total(model, x, t, a);
      if (!std::isfinite(loss))
        throw std::runtime_error("train_probe: loss diverged at epoch " + std::to_string(epoch));
      epoch_sum += loss * static_cast<double>(b);
      seen += b;

      vel.head = cfg.momentum * vel.head - lr * grad.head;
      vel.head_bias = cfg.momentum * vel.head_bias - lr * grad.head_bias;
      model.head += vel.head;
      model.head_bias += vel.head_bias;
      if (model.has_adapter) {
        vel.adapter = cfg.momentum * vel.adapter - lr * grad.adapter;
        vel.adapter_bias = cfg.momentum * vel.adapter_bias - lr * grad.adapter_bias;
        model.adapter += vel.adapter;
        model.adapter_bias += vel.adapter_bias;
      }
      if (!model.head.allFinite() || (model.has_adapter && !model.adapter.allFinite()))
        throw std::runtime_error("train_probe: parameters diverged at epoch " +
                                 std::to_string(epoch));
    }
    result.epoch_loss.push_back(epoch_sum / static_cast<double>(seen));
  }
  result.model = std::move(model);
  return result;
}

/// Fisher's linear discriminant under the shared-covariance Gaussian model:
/// argmax_k log(n_k/n) + mu_k' Sigma^-1 z - mu_k' Sigma^-1 mu_k / 2.
/// Ties go to the lower class id. A ridge of 1e-8*trace/m is added when the
/// covariance is not invertible.
inline int fisher_classify(const VectorXd& z, const GroundTruthModel& model) {
  model.validate();
  const Index m = model.dim();
  MatrixXd sigma = model.shared_covariance;
  Eigen::LLT<MatrixXd> llt(sigma);
  if (llt.info() != Eigen::Success) {
    double ridge = 1e-8 * sigma.trace() / static_cast<double>(m);
    if (!(ridge > 0.0)) ridge = 1e-8;
    sigma += ridge * MatrixXd::Identity(m, m);
    llt.compute(sigma);
    if (llt.info() != Eigen::Success)
      throw std::runtime_error("fisher_classify: covariance not invertible even with ridge");
  }

  const double total = static_cast<double>(model.total_count());
  int best = 0;
  double best_score = -std::numeric_limits<double>::infinity();
  for (int k = 0; k < model.num_classes(); ++k) {
    const VectorXd mu = model.means.row(k).transpose();
    const VectorXd sinv_mu = llt.solve(mu);
    const double score = std::log(static_cast<double>(model.counts[static_cast<std::size_t>(k)]) /
                                  total) +
                         mu.dot(llt.solve(z)) - 0.5 * mu.dot(sinv_mu);
    if (score > best_score) {
      best_score = score;
      best = k;
    }
  }
  return best;
}

/// InfoNCE value for one query against a queue of keys; the positive key is
/// expected to be a member of the queue. Pure scoring utility.
inline double contrastive_loss(const VectorXd& query, const VectorXd& positive_key,
                               const std::vector<VectorXd>& queue, double tau) {
  if (!(tau > 0.0)) throw std::invalid_argument("contrastive_loss: tau must be > 0");
  if (queue.empty()) throw std::invalid_argument("contrastive_loss: empty queue");

  const double pos = query.dot(positive_key) / tau;
  double mx = pos;
  std::vector<double> scores;
  scores.reserve(queue.size());
  for (const VectorXd& key : queue) {
    scores.push_back(query.dot(key) / tau);
    mx = std::max(mx, scores.back());
  }
  double denom = 0.0;
  for (double s : scores) denom += std::exp(s - mx);
  return std::log(denom) + mx - pos;
}

}  // namespace calibre
