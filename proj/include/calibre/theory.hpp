#pragma once

#include "calibre/calibrate.hpp"
#include "calibre/rng.hpp"
#include "calibre/simulate.hpp"
#include "calibre/types.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace calibre {

/// Flip law of the theoretical model: P(noisy=j | clean=k) = eta * n_j / n
/// for j != k, remainder on the diagonal. Distinct from build_transition's
/// experimental law (n - n_i denominator); the two are never mixed.
inline MatrixXd assumption_transition(const std::vector<Index>& counts, double eta) {
  const auto k = static_cast<Index>(counts.size());
  if (k < 2) throw std::invalid_argument("assumption_transition: need K >= 2");
  if (!(eta >= 0.0 && eta < 1.0))
    throw std::invalid_argument("assumption_transition: eta must be in [0,1)");
  double total = 0.0;
  for (Index c : counts) total += static_cast<double>(c);

  MatrixXd t(k, k);
  for (Index i = 0; i < k; ++i) {
    double off = 0.0;
    for (Index j = 0; j < k; ++j) {
      if (i == j) continue;
      t(i, j) = eta * static_cast<double>(counts[static_cast<std::size_t>(j)]) / total;
      off += t(i, j);
    }
    if (off >= 1.0)
      throw std::invalid_argument("assumption_transition: off-diagonal mass reaches 1");
    t(i, i) = 1.0 - off;
  }
  return t;
}

/// Closed form E[mu_hat_k] = (1 - eta + eta n_k/n) mu_k + sum_{j!=k} (eta n_j/n) mu_j.
inline VectorXd expected_noisy_mean(const GroundTruthModel& model, double eta, int k) {
  model.validate();
  const double total = static_cast<double>(model.total_count());
  VectorXd out = (1.0 - eta +
                  eta * static_cast<double>(model.counts[static_cast<std::size_t>(k)]) / total) *
                 model.means.row(k).transpose();
  for (int j = 0; j < model.num_classes(); ++j) {
    if (j == k) continue;
    out += (eta * static_cast<double>(model.counts[static_cast<std::size_t>(j)]) / total) *
           model.means.row(j).transpose();
  }
  return out;
}

/// One Monte-Carlo experiment: a ground-truth model, the assumption flip
/// rate, and the uniform-tau calibration parameters. Head classes are the
/// classes of maximal count (the theoretical setting gives every head class
/// the same size).
struct TheoryExperiment {
  GroundTruthModel model;
  double eta = 0.0;
  int q = 3;
  double tau_calib = 1.0;
  int trials = 100;
  std::vector<int> head_classes;
  double delta_q = 0.0;  // max donor true-mean distance over tail classes

  bool use_omega_weights = false;  // main-text omega estimator instead of uniform tau
  double gamma = 0.5;              // only for the omega estimator
};

inline TheoryExperiment make_theory_experiment(GroundTruthModel model, double eta, int q,
                                               double tau, int trials) {
  model.validate();
  TheoryExperiment exp;
  exp.model = std::move(model);
  exp.eta = eta;
  exp.q = q;
  exp.tau_calib = tau;
  exp.trials = trials;

  const Index max_count = *std::max_element(exp.model.counts.begin(), exp.model.counts.end());
  for (int k = 0; k < exp.model.num_classes(); ++k)
    if (exp.model.counts[static_cast<std::size_t>(k)] == max_count) exp.head_classes.push_back(k);
  if (static_cast<int>(exp.head_classes.size()) < q)
    throw std::invalid_argument("make_theory_experiment: fewer than q head classes");

  // delta_q from true means, over the idealized top-q donor choice per tail.
  for (int k = 0; k < exp.model.num_classes(); ++k) {
    if (std::find(exp.head_classes.begin(), exp.head_classes.end(), k) != exp.head_classes.end())
      continue;
    std::vector<std::pair<double, int>> by_dist;
    for (int h : exp.head_classes)
      by_dist.emplace_back((exp.model.means.row(h) - exp.model.means.row(k)).norm(), h);
    std::sort(by_dist.begin(), by_dist.end());
    for (int i = 0; i < q; ++i) exp.delta_q = std::max(exp.delta_q, by_dist[static_cast<std::size_t>(i)].first);
  }
  return exp;
}

struct MeanErrorReport {
  std::vector<double> vanilla_mse, vanilla_se;
  std::vector<double> calibrated_mse, calibrated_se;
  std::vector<double> calibrated_win_fraction;  // P(calibrated error < vanilla error)
  MatrixXd mc_mean;                             // K x m, average of mu_hat_k over trials
  MatrixXd mc_mean_se;                          // K x m, componentwise standard error
};

/// Per-trial: draw Gaussian data, flip labels with the assumption law,
/// estimate class means from noisy labels, calibrate tail means, and record
/// squared errors against the true means.
inline MeanErrorReport mean_error_mc(const TheoryExperiment& exp, RandomStream& rng) {
  if (exp.trials < 1) throw std::invalid_argument("mean_error_mc: trials must be >= 1");
  exp.model.validate();
  const int num_classes = exp.model.num_classes();
  const Index m = exp.model.dim();
  const MatrixXd flip = assumption_transition(exp.model.counts, exp.eta);

  std::vector<double> van_sum(num_classes, 0.0), van_sq(num_classes, 0.0);
  std::vector<double> cal_sum(num_classes, 0.0), cal_sq(num_classes, 0.0);
  std::vector<double> wins(num_classes, 0.0);
  MatrixXd est_sum = MatrixXd::Zero(num_classes, m);
  MatrixXd est_sq = MatrixXd::Zero(num_classes, m);

  for (int trial = 0; trial < exp.trials; ++trial) {
    RandomStream trial_stream = rng.child(static_cast<std::uint64_t>(trial));
    RandomStream draw_stream = trial_stream.child("draw");
    RandomStream flip_stream = trial_stream.child("flip");

    LabeledEmbeddings data = synth_gaussian(exp.model, draw_stream);
    for (auto& label : data.labels)
      label = detail::sample_row(flip, label, flip_stream);

    MatrixXd est = MatrixXd::Zero(num_classes, m);
    std::vector<Index> counts(static_cast<std::size_t>(num_classes), 0);
    for (Index i = 0; i < data.size(); ++i) {
      est.row(data.labels[static_cast<std::size_t>(i)]) += data.vectors.row(i);
      ++counts[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)])];
    }
    for (int k = 0; k < num_classes; ++k) {
      if (counts[static_cast<std::size_t>(k)] == 0)
        throw std::runtime_error("mean_error_mc: class " + std::to_string(k) +
                                 " received no noisy labels in trial " + std::to_string(trial));
      est.row(k) /= static_cast<double>(counts[static_cast<std::size_t>(k)]);
    }

    for (int k = 0; k < num_classes; ++k) {
      const double vanilla = (est.row(k) - exp.model.means.row(k)).squaredNorm();
      double calibrated = vanilla;
      const bool head = std::find(exp.head_classes.begin(), exp.head_classes.end(), k) !=
                        exp.head_classes.end();
      if (!head) {
        std::vector<std::pair<double, int>> by_dist;
        for (int h : exp.head_classes)
          by_dist.emplace_back((est.row(h) - est.row(k)).squaredNorm(), h);
        std::sort(by_dist.begin(), by_dist.end());
        std::vector<int> donors;
        for (int i = 0; i < exp.q; ++i) donors.push_back(by_dist[static_cast<std::size_t>(i)].second);

        VectorXd mu_cal;
        if (exp.use_omega_weights) {
          double denom = 0.0;
          std::vector<double> w(donors.size());
          for (std::size_t i = 0; i < donors.size(); ++i) {
            const auto c = static_cast<std::size_t>(donors[i]);
            w[i] = static_cast<double>(exp.model.counts[c]) *
                   (est.row(donors[i]) - est.row(k)).squaredNorm();
            denom += w[i];
          }
          VectorXd blend = VectorXd::Zero(m);
          for (std::size_t i = 0; i < donors.size(); ++i)
            blend += (denom > 0.0 ? w[i] / denom : 1.0 / static_cast<double>(donors.size())) *
                     est.row(donors[i]).transpose();
          mu_cal = exp.gamma * blend + (1.0 - exp.gamma) * est.row(k).transpose();
        } else {
          mu_cal = uniform_calibrated_mean(est, donors, k, exp.tau_calib);
        }
        calibrated = (mu_cal.transpose() - exp.model.means.row(k)).squaredNorm();
      }

      van_sum[static_cast<std::size_t>(k)] += vanilla;
      van_sq[static_cast<std::size_t>(k)] += vanilla * vanilla;
      cal_sum[static_cast<std::size_t>(k)] += calibrated;
      cal_sq[static_cast<std::size_t>(k)] += calibrated * calibrated;
      if (calibrated < vanilla) wins[static_cast<std::size_t>(k)] += 1.0;
    }
    est_sum += est;
    est_sq += est.cwiseProduct(est);
  }

  const double t = static_cast<double>(exp.trials);
  MeanErrorReport report;
  report.vanilla_mse.resize(static_cast<std::size_t>(num_classes));
  report.vanilla_se.resize(static_cast<std::size_t>(num_classes));
  report.calibrated_mse.resize(static_cast<std::size_t>(num_classes));
  report.calibrated_se.resize(static_cast<std::size_t>(num_classes));
  report.calibrated_win_fraction.resize(static_cast<std::size_t>(num_classes));
  for (int k = 0; k < num_classes; ++k) {
    const auto ks = static_cast<std::size_t>(k);
    report.vanilla_mse[ks] = van_sum[ks] / t;
    report.calibrated_mse[ks] = cal_sum[ks] / t;
    const double vvar = std::max(0.0, van_sq[ks] / t - report.vanilla_mse[ks] * report.vanilla_mse[ks]);
    const double cvar =
        std::max(0.0, cal_sq[ks] / t - report.calibrated_mse[ks] * report.calibrated_mse[ks]);
    report.vanilla_se[ks] = std::sqrt(vvar / t);
    report.calibrated_se[ks] = std::sqrt(cvar / t);
    report.calibrated_win_fraction[ks] = wins[ks] / t;
  }
  report.mc_mean = est_sum / t;
  report.mc_mean_se.resize(num_classes, m);
  for (Index r = 0; r < report.mc_mean_se.rows(); ++r)
    for (Index c = 0; c < report.mc_mean_se.cols(); ++c) {
      const double var = std::max(0.0, est_sq(r, c) / t - report.mc_mean(r, c) * report.mc_mean(r, c));
      report.mc_mean_se(r, c) = std::sqrt(var / t);
    }
  return report;
}

/// Grid configuration for the error-bound scaling fit. Each cell uses a
/// 3-class model: two head classes of size n_head at distance
/// `head_distance` from the origin along different axes, and one tail class
/// at the origin with the cell's n_tail.
struct ScalingGridConfig {
  std::vector<double> etas = {0.0, 0.1, 0.2, 0.3};
  std::vector<Index> n_tails = {50, 100, 200, 400};
  Index m = 8;
  double sigma = 1.0;
  Index n_head = 1000;
  double head_distance = 1.5;
  int trials = 1500;
  int q = 2;
  double tau = 1.0;
};

struct ScalingFitReport {
  MatrixXd cell_mse;  // etas x n_tails, vanilla MSE of the tail class
  MatrixXd cell_se;
  double intercept = 0.0;
  double eta2_coef = 0.0;
  double m_over_n_coef = 0.0;
  double r_squared = 0.0;
};

inline GroundTruthModel scaling_cell_model(const ScalingGridConfig& cfg, Index n_tail) {
  GroundTruthModel model;
  model.means = MatrixXd::Zero(3, cfg.m);
  model.means(0, 0) = cfg.head_distance;
  model.means(1, 1) = cfg.head_distance;
  model.shared_covariance = cfg.sigma * cfg.sigma * MatrixXd::Identity(cfg.m, cfg.m);
  model.counts = {cfg.n_head, cfg.n_head, n_tail};
  return model;
}

/// Least-squares fit of the tail-class vanilla MSE against
/// a + b * eta^2 + c * m / n_tail over the grid; the bound predicts b, c > 0.
inline ScalingFitReport bound_scaling_check(const ScalingGridConfig& cfg, RandomStream& rng) {
  if (cfg.etas.size() < 4 || cfg.n_tails.size() < 4)
    throw std::invalid_argument("bound_scaling_check: need at least 4 grid points per axis");

  const auto rows = static_cast<Index>(cfg.etas.size() * cfg.n_tails.size());
  MatrixXd design(rows, 3);
  VectorXd response(rows);

  ScalingFitReport report;
  report.cell_mse.resize(static_cast<Index>(cfg.etas.size()), static_cast<Index>(cfg.n_tails.size()));
  report.cell_se.resize(report.cell_mse.rows(), report.cell_mse.cols());

  Index row = 0;
  for (std::size_t ei = 0; ei < cfg.etas.size(); ++ei) {
    for (std::size_t ni = 0; ni < cfg.n_tails.size(); ++ni) {
      TheoryExperiment exp = make_theory_experiment(scaling_cell_model(cfg, cfg.n_tails[ni]),
                                                    cfg.etas[ei], cfg.q, cfg.tau, cfg.trials);
      RandomStream cell = rng.child("cell-" + std::to_string(ei) + "-" + std::to_string(ni));
      const MeanErrorReport mc = mean_error_mc(exp, cell);
      const double mse = mc.vanilla_mse[2];  // tail class
      report.cell_mse(static_cast<Index>(ei), static_cast<Index>(ni)) = mse;
      report.cell_se(static_cast<Index>(ei), static_cast<Index>(ni)) = mc.vanilla_se[2];

      design(row, 0) = 1.0;
      design(row, 1) = cfg.etas[ei] * cfg.etas[ei];
      design(row, 2) = static_cast<double>(cfg.m) / static_cast<double>(cfg.n_tails[ni]);
      response(row) = mse;
      ++row;
    }
  }

  const VectorXd coef = design.colPivHouseholderQr().solve(response);
  report.intercept = coef(0);
  report.eta2_coef = coef(1);
  report.m_over_n_coef = coef(2);

  const double mean_y = response.mean();
  const double ss_tot = (response.array() - mean_y).square().sum();
  const double ss_res = (response - design * coef).array().square().sum();
  report.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return report;
}

}  // namespace calibre
