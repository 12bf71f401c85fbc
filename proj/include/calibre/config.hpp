#pragma once

#include "calibre/metrics.hpp"
#include "calibre/sample.hpp"
#include "calibre/serialize.hpp"
#include "calibre/train.hpp"
#include "calibre/types.hpp"

#include <json.hpp>

#include <optional>
#include <stdexcept>
#include <string>

namespace calibre {

/// Synthetic ground-truth generation: K Gaussian classes with random means
/// of scale `mean_scale` and shared spherical covariance sigma^2 I.
struct SyntheticSpec {
  Index dim = 16;
  int num_classes = 10;
  Index train_per_class = 1000;
  Index test_per_class = 200;
  double mean_scale = 1.0;
  double sigma = 1.0;
};

struct SampleConfig {
  BalanceTarget target = BalanceTarget::max();
  bool mixup_synthetic = false;
};

/// Full experiment manifest. Sections mirror the module names; CLI flags
/// override individual fields.
struct PipelineConfig {
  std::uint64_t seed = 0;
  std::string out_dir = "out";

  std::optional<std::string> embeddings;       // clean source data
  std::optional<std::string> test_embeddings;  // clean test data
  std::optional<SyntheticSpec> synthetic;

  std::optional<CorruptionSpec> corruption;  // absent -> data used as-is
  CalibrationConfig calibration;
  SampleConfig sampling;
  TrainConfig training;
  SplitConfig metrics_split;
};

/// Components removable via --ablate (true = removed).
struct AblationFlags {
  bool cl_anchor = false;  // drop the identity-initialized adapter
  bool dc = false;         // drop LOF + calibration + balancing
  bool mixup = false;
  bool reg = false;

  static AblationFlags parse(const std::string& token) {
    AblationFlags f;
    f.apply(token);
    return f;
  }

  void apply(const std::string& token) {
    if (token == "all") {
      cl_anchor = dc = mixup = reg = true;
    } else if (token == "cl-anchor") {
      cl_anchor = true;
    } else if (token == "dc") {
      dc = true;
    } else if (token == "mixup") {
      mixup = true;
    } else if (token == "reg") {
      reg = true;
    } else {
      throw std::invalid_argument("unknown ablation '" + token +
                                  "' (expected cl-anchor, dc, mixup, reg, or all)");
    }
  }
};

namespace config_detail {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace config_detail

inline CalibrationConfig calibration_from_json(const json& j) {
  CalibrationConfig c;
  config_detail::read_field(j, "q", c.q);
  config_detail::read_field(j, "gamma", c.gamma);
  config_detail::read_field(j, "alpha", c.alpha);
  config_detail::read_field(j, "lof_neighbors", c.lof_neighbors);
  config_detail::read_field(j, "lof_threshold", c.lof_threshold);
  config_detail::read_field(j, "head_mass", c.head_mass);
  if (j.contains("disturbance")) {
    const auto mode = j.at("disturbance").get<std::string>();
    if (mode == "ones")
      c.disturbance = Disturbance::kOnes;
    else if (mode == "identity")
      c.disturbance = Disturbance::kIdentity;
    else
      throw std::invalid_argument("calibrate.disturbance must be 'ones' or 'identity'");
  }
  config_detail::read_field(j, "invert_weights", c.invert_weights);
  c.validate();
  return c;
}

inline CorruptionSpec corruption_from_json(const json& j) {
  CorruptionSpec s;
  config_detail::read_field(j, "imbalance_ratio", s.imbalance_ratio);
  config_detail::read_field(j, "noise_rate", s.noise_rate);
  config_detail::read_field(j, "num_classes", s.num_classes);
  long base = static_cast<long>(s.base_count);
  config_detail::read_field(j, "base_count", base);
  s.base_count = base;
  return s;
}

inline TrainConfig train_from_json(const json& j) {
  TrainConfig t;
  config_detail::read_field(j, "epochs", t.epochs);
  long batch = static_cast<long>(t.batch_size);
  config_detail::read_field(j, "batch", batch);
  t.batch_size = batch;
  config_detail::read_field(j, "lr", t.learning_rate);
  config_detail::read_field(j, "momentum", t.momentum);
  config_detail::read_field(j, "beta", t.beta);
  config_detail::read_field(j, "mixup_alpha", t.mixup_alpha);
  config_detail::read_field(j, "mixup", t.use_mixup);
  config_detail::read_field(j, "lr_decay_at", t.lr_decay_at);
  return t;
}

inline PipelineConfig pipeline_config_from_json(const json& j) {
  PipelineConfig cfg;
  config_detail::read_field(j, "seed", cfg.seed);
  config_detail::read_field(j, "out_dir", cfg.out_dir);

  if (j.contains("data")) {
    const auto& d = j.at("data");
    if (d.contains("embeddings")) cfg.embeddings = d.at("embeddings").get<std::string>();
    if (d.contains("test_embeddings"))
      cfg.test_embeddings = d.at("test_embeddings").get<std::string>();
    if (d.contains("synthetic")) {
      const auto& s = d.at("synthetic");
      SyntheticSpec spec;
      long dim = static_cast<long>(spec.dim);
      config_detail::read_field(s, "dim", dim);
      spec.dim = dim;
      config_detail::read_field(s, "num_classes", spec.num_classes);
      long train_pc = static_cast<long>(spec.train_per_class);
      config_detail::read_field(s, "train_per_class", train_pc);
      spec.train_per_class = train_pc;
      long test_pc = static_cast<long>(spec.test_per_class);
      config_detail::read_field(s, "test_per_class", test_pc);
      spec.test_per_class = test_pc;
      config_detail::read_field(s, "mean_scale", spec.mean_scale);
      config_detail::read_field(s, "sigma", spec.sigma);
      cfg.synthetic = spec;
    }
  }
  if (!cfg.embeddings && !cfg.synthetic)
    throw std::invalid_argument("config: data.embeddings or data.synthetic is required");

  if (j.contains("simulate")) cfg.corruption = corruption_from_json(j.at("simulate"));
  if (j.contains("calibrate")) cfg.calibration = calibration_from_json(j.at("calibrate"));
  if (j.contains("sample")) {
    const auto& s = j.at("sample");
    if (s.contains("target")) {
      const auto& t = s.at("target");
      if (t.is_string() && t.get<std::string>() == "max")
        cfg.sampling.target = BalanceTarget::max();
      else if (t.is_number_integer())
        cfg.sampling.target = BalanceTarget::fixed(t.get<long>());
      else
        throw std::invalid_argument("sample.target must be \"max\" or an integer");
    }
    config_detail::read_field(s, "mixup_synthetic", cfg.sampling.mixup_synthetic);
  }
  if (j.contains("train")) cfg.training = train_from_json(j.at("train"));
  if (j.contains("metrics")) {
    const auto& m = j.at("metrics");
    if (m.contains("many_min") && m.contains("few_max")) {
      cfg.metrics_split.many_min = m.at("many_min").get<Index>();
      cfg.metrics_split.few_max = m.at("few_max").get<Index>();
    }
  }
  cfg.training.mixup_synthetic = cfg.sampling.mixup_synthetic;
  return cfg;
}

inline PipelineConfig load_pipeline_config(const std::string& path) {
  return pipeline_config_from_json(detail::read_json_file(path));
}

}  // namespace calibre
