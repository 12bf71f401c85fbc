#pragma once

#include "calibre/calibrate.hpp"
#include "calibre/config.hpp"
#include "calibre/io.hpp"
#include "calibre/lof.hpp"
#include "calibre/metrics.hpp"
#include "calibre/rng.hpp"
#include "calibre/sample.hpp"
#include "calibre/serialize.hpp"
#include "calibre/simulate.hpp"
#include "calibre/train.hpp"
#include "calibre/types.hpp"

#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

namespace calibre {

namespace pipeline_detail {

template <typename Fn>
auto stage(const std::string& name, Fn&& fn) {
  try {
    return fn();
  } catch (const std::exception& e) {
    throw std::runtime_error("[" + name + "] " + e.what());
  }
}

}  // namespace pipeline_detail

/// Random ground truth for synthetic experiments: class means drawn as
/// mean_scale * N(0, I), shared covariance sigma^2 I.
inline GroundTruthModel synthetic_model(const SyntheticSpec& spec, std::uint64_t seed) {
  RandomStream stream = seeded_rng(seed, "model");
  GroundTruthModel model;
  model.means.resize(spec.num_classes, spec.dim);
  for (Index r = 0; r < model.means.rows(); ++r)
    for (Index c = 0; c < model.means.cols(); ++c)
      model.means(r, c) = spec.mean_scale * stream.normal();
  model.shared_covariance = spec.sigma * spec.sigma * MatrixXd::Identity(spec.dim, spec.dim);
  model.counts.assign(static_cast<std::size_t>(spec.num_classes), spec.train_per_class);
  model.validate();
  return model;
}

struct CorruptionOutcome {
  LabeledEmbeddings data;
  std::vector<int> clean_labels;
  std::vector<Index> realized_counts;
  double empirical_noise_rate = 0.0;
};

/// Long-tail subsample followed by transition-matrix label flips. An
/// imbalance ratio <= 1 skips subsampling; eta = 0 leaves labels unchanged.
inline CorruptionOutcome corrupt_dataset(const LabeledEmbeddings& source, CorruptionSpec spec,
                                         std::uint64_t seed) {
  CorruptionOutcome out;
  if (spec.num_classes == 0) spec.num_classes = static_cast<int>(source.num_classes);
  if (spec.num_classes != source.num_classes)
    throw std::invalid_argument("corrupt_dataset: num_classes does not match data");

  LabeledEmbeddings tailed = source;
  if (spec.imbalance_ratio > 1.0) {
    if (spec.base_count <= 0) {
      const auto available = source.class_counts();
      spec.base_count = *std::min_element(available.begin(), available.end());
    }
    const auto counts = longtail_counts(spec);
    RandomStream sub = seeded_rng(seed, "subsample");
    tailed = subsample_longtail(source, counts, sub);
  }

  const auto realized = tailed.class_counts();
  if (spec.noise_rate > 0.0) {
    const TransitionMatrix t = build_transition(realized, spec.noise_rate);
    RandomStream noise = seeded_rng(seed, "noise");
    auto [noisy, clean] = inject_noise(tailed, t, noise);
    out.data = std::move(noisy);
    out.clean_labels = std::move(clean);
  } else {
    out.data = std::move(tailed);
    out.clean_labels = out.data.labels;
  }

  out.realized_counts = out.data.class_counts();
  Index flips = 0;
  for (std::size_t i = 0; i < out.clean_labels.size(); ++i)
    if (out.clean_labels[i] != out.data.labels[i]) ++flips;
  out.empirical_noise_rate =
      static_cast<double>(flips) / static_cast<double>(out.clean_labels.size());
  return out;
}

inline void write_mask_csv(const std::vector<bool>& mask, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error(path + ": cannot open for writing");
  out << "synthetic\n";
  for (bool synthetic : mask) out << (synthetic ? 1 : 0) << "\n";
}

inline std::vector<bool> read_mask_csv(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw io_error(path + ": cannot open for reading");
  std::string line;
  if (!std::getline(in, line)) throw io_error(path + ": empty mask file");
  std::vector<bool> mask;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    mask.push_back(line[0] == '1');
  }
  return mask;
}

inline void write_lof_csv(const LabeledEmbeddings& data, const ClassFilterResult& filter,
                          const std::string& path) {
  std::ofstream out(path);
  if (!out) throw io_error(path + ": cannot open for writing");
  out << "index,label,score,skipped\n";
  for (Index i = 0; i < data.size(); ++i) {
    const auto label = static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)]);
    out << i << ',' << data.labels[static_cast<std::size_t>(i)] << ','
        << detail::format_double(filter.scores[static_cast<std::size_t>(i)]) << ','
        << (filter.skipped[label] ? 1 : 0) << "\n";
  }
}

struct PipelineResult {
  MetricsReport metrics;
  json metrics_json;
  std::vector<Index> train_counts;       // noisy long-tailed class sizes
  double empirical_noise_rate = 0.0;
  std::string metrics_path;
};

/// End-to-end run: (optional) corruption -> LOF filter -> robust stats ->
/// head/tail calibration -> balancing -> probe training -> evaluation.
/// Every stage's artifact is written under cfg.out_dir before the next stage
/// starts, so failures leave partial outputs behind for debugging.
inline PipelineResult run_pipeline(const PipelineConfig& cfg, const AblationFlags& ablate = {},
                                   const std::optional<std::string>& dump_lof = std::nullopt,
                                   bool quiet = false) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out_dir);
  const auto path_in = [&](const std::string& name) { return (fs::path(cfg.out_dir) / name).string(); };
  const auto log = [&](const std::string& line) {
    if (!quiet) std::cerr << line << "\n";
  };

  // -- data ----------------------------------------------------------------
  LabeledEmbeddings train_source;
  std::optional<LabeledEmbeddings> test;
  pipeline_detail::stage("data", [&] {
    if (cfg.synthetic) {
      const GroundTruthModel model = synthetic_model(*cfg.synthetic, cfg.seed);
      RandomStream train_stream = seeded_rng(cfg.seed, "synth-train");
      train_source = synth_gaussian(model, train_stream);
      GroundTruthModel test_model = model;
      test_model.counts.assign(test_model.counts.size(), cfg.synthetic->test_per_class);
      RandomStream test_stream = seeded_rng(cfg.seed, "synth-test");
      test = synth_gaussian(test_model, test_stream);
    } else {
      train_source = load_embeddings(*cfg.embeddings);
    }
    if (cfg.test_embeddings) test = load_embeddings(*cfg.test_embeddings);
    if (!test) throw std::invalid_argument("no test data: provide data.test_embeddings or data.synthetic");
    return 0;
  });
  log("[data] train n=" + std::to_string(train_source.size()) +
      " test n=" + std::to_string(test->size()));

  // -- simulate ------------------------------------------------------------
  CorruptionOutcome corrupted;
  pipeline_detail::stage("simulate", [&] {
    if (cfg.corruption) {
      corrupted = corrupt_dataset(train_source, *cfg.corruption, cfg.seed);
    } else {
      corrupted.data = train_source;
      corrupted.clean_labels = train_source.labels;
      corrupted.realized_counts = train_source.class_counts();
    }
    save_embeddings(corrupted.data, path_in("noisy.csv"));
    json sidecar;
    sidecar["realized_counts"] = corrupted.realized_counts;
    sidecar["empirical_noise_rate"] = corrupted.empirical_noise_rate;
    detail::write_json_file(sidecar, path_in("noisy.sidecar.json"));
    return 0;
  });
  log("[simulate] n=" + std::to_string(corrupted.data.size()) +
      " empirical_noise_rate=" + std::to_string(corrupted.empirical_noise_rate));

  const LabeledEmbeddings& train_data = corrupted.data;
  const std::vector<Index> train_counts = corrupted.realized_counts;

  // -- calibrate + sample (distributional calibration) ----------------------
  LabeledEmbeddings final_train = train_data;
  std::vector<bool> synthetic_mask(static_cast<std::size_t>(train_data.size()), false);
  if (!ablate.dc) {
    std::vector<CalibratedStats> calibrated;
    ClassPartition partition;
    pipeline_detail::stage("calibrate", [&] {
      const ClassFilterResult filter = filter_classes(train_data, cfg.calibration);
      if (dump_lof) write_lof_csv(train_data, filter, *dump_lof);
      const auto stats = robust_class_stats(train_data, filter.preserved);
      partition = split_head_tail(train_counts, cfg.calibration.head_mass);
      calibrated = calibrate_tail(stats, train_counts, partition, cfg.calibration);
      detail::write_json_file(stats_to_json(calibrated, partition, train_counts, train_data.dim),
                              path_in("stats.json"));
      return 0;
    });
    log("[calibrate] head classes=" + std::to_string(partition.head.size()) +
        " tail classes=" + std::to_string(partition.tail.size()));

    pipeline_detail::stage("sample", [&] {
      RandomStream sampling = seeded_rng(cfg.seed, "sampling");
      BalancedDataset balanced =
          balance_dataset(train_data, calibrated, cfg.sampling.target, sampling);
      save_embeddings(balanced.data, path_in("balanced.csv"));
      write_mask_csv(balanced.synthetic_mask, path_in("balanced.mask.csv"));
      final_train = std::move(balanced.data);
      synthetic_mask = std::move(balanced.synthetic_mask);
      return 0;
    });
    log("[sample] balanced n=" + std::to_string(final_train.size()));
  }

  // -- train ----------------------------------------------------------------
  ProbeModel model;
  pipeline_detail::stage("train", [&] {
    TrainConfig tc = cfg.training;
    tc.use_adapter = !ablate.cl_anchor;
    if (ablate.reg) tc.beta = 0.0;
    if (ablate.mixup) tc.use_mixup = false;
    RandomStream train_stream = seeded_rng(cfg.seed, "train");
    TrainResult result = train_probe(final_train, nullptr, &synthetic_mask, tc, train_stream);
    model = std::move(result.model);
    detail::write_json_file(model_to_json(model, train_counts), path_in("model.json"));
    return 0;
  });
  log("[train] done");

  // -- evaluate ---------------------------------------------------------------
  PipelineResult result;
  pipeline_detail::stage("evaluate", [&] {
    result.metrics = evaluate(model, *test, train_counts, cfg.metrics_split);
    result.metrics_json = metrics_to_json(result.metrics);
    result.metrics_path = path_in("metrics.json");
    detail::write_json_file(result.metrics_json, result.metrics_path);
    return 0;
  });
  result.train_counts = train_counts;
  result.empirical_noise_rate = corrupted.empirical_noise_rate;
  log("[evaluate] overall=" + std::to_string(result.metrics.overall));
  return result;
}

}  // namespace calibre
