#pragma once

#include "calibre/calibrate.hpp"
#include "calibre/metrics.hpp"
#include "calibre/train.hpp"
#include "calibre/types.hpp"

#include <json.hpp>

#include <fstream>
#include <stdexcept>
#include <string>
#include <vector>

namespace calibre {

using json = nlohmann::json;

namespace detail {

inline json matrix_rowmajor(const MatrixXd& m) {
  json out = json::array();
  for (Index r = 0; r < m.rows(); ++r)
    for (Index c = 0; c < m.cols(); ++c) out.push_back(m(r, c));
  return out;
}

inline MatrixXd matrix_from_rowmajor(const json& j, Index rows, Index cols,
                                     const std::string& what) {
  if (!j.is_array() || static_cast<Index>(j.size()) != rows * cols)
    throw std::runtime_error(what + ": expected " + std::to_string(rows * cols) + " entries");
  MatrixXd m(rows, cols);
  Index i = 0;
  for (Index r = 0; r < rows; ++r)
    for (Index c = 0; c < cols; ++c) m(r, c) = j[static_cast<std::size_t>(i++)].get<double>();
  return m;
}

inline json vector_json(const VectorXd& v) {
  json out = json::array();
  for (Index i = 0; i < v.size(); ++i) out.push_back(v(i));
  return out;
}

inline VectorXd vector_from_json(const json& j, Index size, const std::string& what) {
  if (!j.is_array() || static_cast<Index>(j.size()) != size)
    throw std::runtime_error(what + ": expected " + std::to_string(size) + " entries");
  VectorXd v(size);
  for (Index i = 0; i < size; ++i) v(i) = j[static_cast<std::size_t>(i)].get<double>();
  return v;
}

inline json read_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error(path + ": cannot open for reading");
  json j;
  in >> j;
  return j;
}

inline void write_json_file(const json& j, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error(path + ": cannot open for writing");
  out << j.dump(2) << "\n";
}

}  // namespace detail

/// stats.json — per-class base and calibrated Gaussians, donor sets, weights.
inline json stats_to_json(const std::vector<CalibratedStats>& stats,
                          const ClassPartition& partition, const std::vector<Index>& class_counts,
                          Index dim) {
  json classes = json::array();
  for (const auto& s : stats) {
    json entry;
    entry["class_id"] = s.base.class_id;
    entry["count"] = class_counts[static_cast<std::size_t>(s.base.class_id)];
    entry["preserved_count"] = s.base.count;
    entry["is_head"] = s.is_head;
    entry["mean"] = detail::vector_json(s.base.mean);
    entry["covariance"] = detail::matrix_rowmajor(s.base.covariance);
    entry["calibrated_mean"] = detail::vector_json(s.calibrated_mean);
    entry["calibrated_covariance"] = detail::matrix_rowmajor(s.calibrated_cov);
    entry["donors"] = s.donors;
    entry["weights"] = s.weights;
    classes.push_back(entry);
  }
  json out;
  out["dim"] = dim;
  out["num_classes"] = static_cast<Index>(stats.size());
  out["head_classes"] = partition.head;
  out["tail_classes"] = partition.tail;
  out["classes"] = classes;
  return out;
}

struct StatsFile {
  Index dim = 0;
  std::vector<CalibratedStats> stats;
  std::vector<int> head_classes, tail_classes;
  std::vector<Index> class_counts;
};

inline StatsFile stats_from_json(const json& j) {
  StatsFile f;
  f.dim = j.at("dim").get<Index>();
  f.head_classes = j.at("head_classes").get<std::vector<int>>();
  f.tail_classes = j.at("tail_classes").get<std::vector<int>>();
  const auto& classes = j.at("classes");
  f.stats.resize(classes.size());
  f.class_counts.resize(classes.size());
  for (std::size_t k = 0; k < classes.size(); ++k) {
    const auto& entry = classes[k];
    CalibratedStats& s = f.stats[k];
    s.base.class_id = entry.at("class_id").get<int>();
    s.base.count = entry.at("preserved_count").get<Index>();
    s.base.mean = detail::vector_from_json(entry.at("mean"), f.dim, "stats mean");
    s.base.covariance =
        detail::matrix_from_rowmajor(entry.at("covariance"), f.dim, f.dim, "stats covariance");
    s.calibrated_mean =
        detail::vector_from_json(entry.at("calibrated_mean"), f.dim, "calibrated mean");
    s.calibrated_cov = detail::matrix_from_rowmajor(entry.at("calibrated_covariance"), f.dim,
                                                    f.dim, "calibrated covariance");
    s.donors = entry.at("donors").get<std::vector<int>>();
    s.weights = entry.at("weights").get<std::vector<double>>();
    s.is_head = entry.at("is_head").get<bool>();
    f.class_counts[k] = entry.at("count").get<Index>();
  }
  return f;
}

/// model.json — adapter and head matrices (row-major) plus the training
/// class counts the metrics split rule needs.
inline json model_to_json(const ProbeModel& model, const std::vector<Index>& train_counts) {
  json out;
  out["dim"] = model.dim();
  out["num_classes"] = model.num_classes();
  out["has_adapter"] = model.has_adapter;
  if (model.has_adapter) {
    out["adapter"] = detail::matrix_rowmajor(model.adapter);
    out["adapter_bias"] = detail::vector_json(model.adapter_bias);
  }
  out["head"] = detail::matrix_rowmajor(model.head);
  out["head_bias"] = detail::vector_json(model.head_bias);
  out["beta"] = model.beta;
  out["mixup_alpha"] = model.mixup_alpha;
  out["train_class_counts"] = train_counts;
  return out;
}

struct ModelFile {
  ProbeModel model;
  std::vector<Index> train_counts;
};

inline ModelFile model_from_json(const json& j) {
  ModelFile f;
  const auto m = j.at("dim").get<Index>();
  const auto k = j.at("num_classes").get<Index>();
  f.model.has_adapter = j.at("has_adapter").get<bool>();
  if (f.model.has_adapter) {
    f.model.adapter = detail::matrix_from_rowmajor(j.at("adapter"), m, m, "adapter");
    f.model.adapter_bias = detail::vector_from_json(j.at("adapter_bias"), m, "adapter_bias");
  } else {
    f.model.adapter = MatrixXd::Identity(m, m);
    f.model.adapter_bias = VectorXd::Zero(m);
  }
  f.model.head = detail::matrix_from_rowmajor(j.at("head"), k, m, "head");
  f.model.head_bias = detail::vector_from_json(j.at("head_bias"), k, "head_bias");
  f.model.beta = j.at("beta").get<double>();
  f.model.mixup_alpha = j.at("mixup_alpha").get<double>();
  f.train_counts = j.at("train_class_counts").get<std::vector<Index>>();
  return f;
}

/// metrics.json — {overall, many, medium, few, per_class}.
inline json metrics_to_json(const MetricsReport& report) {
  json out;
  out["overall"] = report.overall;
  out["many"] = report.many ? json(*report.many) : json(nullptr);
  out["medium"] = report.medium ? json(*report.medium) : json(nullptr);
  out["few"] = report.few ? json(*report.few) : json(nullptr);
  json per_class = json::array();
  for (const auto& acc : report.per_class)
    per_class.push_back(acc ? json(*acc) : json(nullptr));
  out["per_class"] = per_class;
  return out;
}

}  // namespace calibre
