#pragma once

#include "calibre/train.hpp"
#include "calibre/types.hpp"

#include <algorithm>
#include <numeric>
#include <optional>
#include <stdexcept>
#include <vector>

namespace calibre {

/// Many/medium/few split rule: rank classes by training count and take
/// thirds (remainder classes go to the middle), or absolute count thresholds
/// when provided.
struct SplitConfig {
  std::optional<Index> many_min;  // count >= many_min -> many
  std::optional<Index> few_max;   // count <= few_max  -> few

  bool thresholds() const { return many_min.has_value() && few_max.has_value(); }
};

struct ClassSplits {
  std::vector<int> many, medium, few;
};

inline ClassSplits split_classes(const std::vector<Index>& train_counts, const SplitConfig& cfg) {
  const auto k = static_cast<int>(train_counts.size());
  ClassSplits splits;
  if (cfg.thresholds()) {
    for (int c = 0; c < k; ++c) {
      const Index n = train_counts[static_cast<std::size_t>(c)];
      if (n >= *cfg.many_min)
        splits.many.push_back(c);
      else if (n <= *cfg.few_max)
        splits.few.push_back(c);
      else
        splits.medium.push_back(c);
    }
    return splits;
  }

  std::vector<int> order(train_counts.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
    return train_counts[static_cast<std::size_t>(a)] > train_counts[static_cast<std::size_t>(b)];
  });
  const int third = k / 3;
  for (int i = 0; i < k; ++i) {
    if (i < third)
      splits.many.push_back(order[static_cast<std::size_t>(i)]);
    else if (i >= k - third)
      splits.few.push_back(order[static_cast<std::size_t>(i)]);
    else
      splits.medium.push_back(order[static_cast<std::size_t>(i)]);
  }
  std::sort(splits.many.begin(), splits.many.end());
  std::sort(splits.medium.begin(), splits.medium.end());
  std::sort(splits.few.begin(), splits.few.end());
  return splits;
}

struct MetricsReport {
  double overall = 0.0;
  std::optional<double> many, medium, few;
  std::vector<std::optional<double>> per_class;
  ClassSplits splits;
};

/// Accuracy on clean-labeled test data, overall and per many/medium/few
/// split. `train_counts` carry the training-set class sizes the split rule
/// needs. Splits without any test example report no value.
inline MetricsReport evaluate(const ProbeModel& model, const LabeledEmbeddings& test,
                              const std::vector<Index>& train_counts,
                              const SplitConfig& split_cfg = {}) {
  test.validate();
  if (test.num_classes != static_cast<Index>(train_counts.size()))
    throw std::invalid_argument("evaluate: train_counts do not match num_classes");
  if (test.dim != model.dim()) throw std::invalid_argument("evaluate: model dim mismatch");

  const auto k = static_cast<std::size_t>(test.num_classes);
  std::vector<Index> correct(k, 0), seen(k, 0);
  const MatrixXd logits = model.logits(test.vectors);
  for (Index i = 0; i < test.size(); ++i) {
    int best = 0;
    for (int c = 1; c < static_cast<int>(k); ++c)
      if (logits(i, c) > logits(i, best)) best = c;
    const auto label = static_cast<std::size_t>(test.labels[static_cast<std::size_t>(i)]);
    ++seen[label];
    if (best == static_cast<int>(label)) ++correct[label];
  }

  MetricsReport report;
  report.splits = split_classes(train_counts, split_cfg);
  Index total_correct = 0;
  for (std::size_t c = 0; c < k; ++c) total_correct += correct[c];
  report.overall = static_cast<double>(total_correct) / static_cast<double>(test.size());

  report.per_class.resize(k);
  for (std::size_t c = 0; c < k; ++c) {
    if (seen[c] > 0)
      report.per_class[c] = static_cast<double>(correct[c]) / static_cast<double>(seen[c]);
  }

  auto split_accuracy = [&](const std::vector<int>& classes) -> std::optional<double> {
    Index hit = 0, n = 0;
    for (int c : classes) {
      hit += correct[static_cast<std::size_t>(c)];
      n += seen[static_cast<std::size_t>(c)];
    }
    if (n == 0) return std::nullopt;
    return static_cast<double>(hit) / static_cast<double>(n);
  };
  report.many = split_accuracy(report.splits.many);
  report.medium = split_accuracy(report.splits.medium);
  report.few = split_accuracy(report.splits.few);
  return report;
}

}  // namespace calibre
