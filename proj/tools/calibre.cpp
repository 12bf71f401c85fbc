// Command-line front end wiring the toolkit end to end: long-tail/noise
// simulation, LOF filtering + Gaussian calibration, rebalancing via sampled
// representations, probe training, evaluation, and the theory harness.

#include "calibre/calibre.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <cstdint>
#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

namespace {

using calibre::Index;
using calibre::json;

calibre::json read_section(const std::string& path, const char* section) {
  const json j = calibre::detail::read_json_file(path);
  if (j.contains(section)) return j.at(section);
  return j;
}

std::vector<Index> read_counts_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw calibre::io_error(path + ": cannot open for reading");
  std::vector<Index> counts;
  long v = 0;
  while (in >> v) counts.push_back(static_cast<Index>(v));
  if (counts.empty()) throw calibre::io_error(path + ": no counts found");
  return counts;
}

int cmd_simulate(const std::string& in_path, const std::string& synthetic_spec,
                 const std::string& out_path, double rho, double eta, std::uint64_t seed,
                 long base_count, double mean_scale, double sigma, const std::string& sidecar) {
  calibre::LabeledEmbeddings data;
  if (!synthetic_spec.empty()) {
    // --synthetic m,K,counts-file
    const auto c1 = synthetic_spec.find(',');
    const auto c2 = synthetic_spec.find(',', c1 == std::string::npos ? c1 : c1 + 1);
    if (c1 == std::string::npos || c2 == std::string::npos)
      throw std::invalid_argument("--synthetic expects m,K,counts-file");
    calibre::SyntheticSpec spec;
    spec.dim = std::stol(synthetic_spec.substr(0, c1));
    spec.num_classes = std::stoi(synthetic_spec.substr(c1 + 1, c2 - c1 - 1));
    spec.mean_scale = mean_scale;
    spec.sigma = sigma;
    calibre::GroundTruthModel model = calibre::synthetic_model(spec, seed);
    model.counts = read_counts_file(synthetic_spec.substr(c2 + 1));
    if (static_cast<int>(model.counts.size()) != spec.num_classes)
      throw std::invalid_argument("--synthetic counts file must list K counts");
    calibre::RandomStream stream = calibre::seeded_rng(seed, "synth-train");
    data = calibre::synth_gaussian(model, stream);
  } else if (!in_path.empty()) {
    data = calibre::load_embeddings(in_path);
  } else {
    throw std::invalid_argument("simulate: provide --in or --synthetic");
  }

  calibre::CorruptionSpec spec;
  spec.imbalance_ratio = rho;
  spec.noise_rate = eta;
  spec.num_classes = static_cast<int>(data.num_classes);
  spec.base_count = base_count;
  const calibre::CorruptionOutcome outcome = calibre::corrupt_dataset(data, spec, seed);
  calibre::save_embeddings(outcome.data, out_path);

  json side;
  side["realized_counts"] = outcome.realized_counts;
  side["empirical_noise_rate"] = outcome.empirical_noise_rate;
  const std::string side_path = sidecar.empty() ? out_path + ".sidecar.json" : sidecar;
  calibre::detail::write_json_file(side, side_path);
  std::cerr << "[simulate] wrote " << out_path << " (n=" << outcome.data.size()
            << ", empirical noise rate " << outcome.empirical_noise_rate << ")\n";
  return 0;
}

int cmd_calibrate(const std::string& in_path, const std::string& config_path,
                  const std::string& out_path, std::optional<int> lof_k,
                  std::optional<double> lof_threshold, const std::string& dump_lof) {
  const calibre::LabeledEmbeddings data = calibre::load_embeddings(in_path);
  calibre::CalibrationConfig cfg;
  if (!config_path.empty())
    cfg = calibre::calibration_from_json(read_section(config_path, "calibrate"));
  if (lof_k) cfg.lof_neighbors = *lof_k;
  if (lof_threshold) cfg.lof_threshold = *lof_threshold;
  cfg.validate();

  const calibre::ClassFilterResult filter = calibre::filter_classes(data, cfg);
  if (!dump_lof.empty()) calibre::write_lof_csv(data, filter, dump_lof);
  const auto stats = calibre::robust_class_stats(data, filter.preserved);
  const auto counts = data.class_counts();
  const auto partition = calibre::split_head_tail(counts, cfg.head_mass);
  const auto calibrated = calibre::calibrate_tail(stats, counts, partition, cfg);
  calibre::detail::write_json_file(
      calibre::stats_to_json(calibrated, partition, counts, data.dim), out_path);
  std::cerr << "[calibrate] wrote " << out_path << " (" << partition.head.size() << " head, "
            << partition.tail.size() << " tail)\n";
  return 0;
}

int cmd_sample(const std::string& stats_path, const std::string& in_path,
               const std::string& out_path, const std::string& mask_path,
               const std::string& target, std::uint64_t seed) {
  const calibre::LabeledEmbeddings data = calibre::load_embeddings(in_path);
  const calibre::StatsFile stats =
      calibre::stats_from_json(calibre::detail::read_json_file(stats_path));

  calibre::BalanceTarget bt = calibre::BalanceTarget::max();
  if (target != "max") bt = calibre::BalanceTarget::fixed(std::stol(target));
  calibre::RandomStream stream = calibre::seeded_rng(seed, "sampling");
  const calibre::BalancedDataset balanced = calibre::balance_dataset(data, stats.stats, bt, stream);
  calibre::save_embeddings(balanced.data, out_path);
  calibre::write_mask_csv(balanced.synthetic_mask,
                          mask_path.empty() ? out_path + ".mask.csv" : mask_path);
  std::cerr << "[sample] wrote " << out_path << " (n=" << balanced.data.size() << ")\n";
  return 0;
}

int cmd_train(const std::string& in_path, const std::string& anchors_path,
              const std::string& mask_path, const std::string& config_path,
              const std::string& out_path, std::uint64_t seed) {
  const calibre::LabeledEmbeddings data = calibre::load_embeddings(in_path);
  calibre::TrainConfig cfg;
  if (!config_path.empty()) cfg = calibre::train_from_json(read_section(config_path, "train"));

  calibre::MatrixXd anchors;
  const calibre::MatrixXd* anchors_ptr = nullptr;
  if (!anchors_path.empty()) {
    const calibre::LabeledEmbeddings anchor_data = calibre::load_embeddings(anchors_path);
    if (anchor_data.dim != data.dim) throw std::invalid_argument("train: anchor dim mismatch");
    if (anchor_data.size() > data.size())
      throw std::invalid_argument("train: anchors file has more rows than the training data");
    // Anchor rows cover the original prefix; synthetic rows anchor to themselves.
    anchors = data.vectors;
    anchors.topRows(anchor_data.size()) = anchor_data.vectors;
    anchors_ptr = &anchors;
  }

  std::vector<bool> mask;
  const std::vector<bool>* mask_ptr = nullptr;
  if (!mask_path.empty()) {
    mask = calibre::read_mask_csv(mask_path);
    if (static_cast<Index>(mask.size()) != data.size())
      throw std::invalid_argument("train: mask length does not match data");
    mask_ptr = &mask;
  }

  calibre::RandomStream stream = calibre::seeded_rng(seed, "train");
  const calibre::TrainResult result =
      calibre::train_probe(data, anchors_ptr, mask_ptr, cfg, stream);

  // The split rule wants pre-balancing sizes; recover them by ignoring
  // synthetic rows when a mask is given.
  std::vector<Index> train_counts(static_cast<std::size_t>(data.num_classes), 0);
  for (Index i = 0; i < data.size(); ++i)
    if (!mask_ptr || !mask[static_cast<std::size_t>(i)])
      ++train_counts[static_cast<std::size_t>(data.labels[static_cast<std::size_t>(i)])];

  calibre::detail::write_json_file(calibre::model_to_json(result.model, train_counts), out_path);
  std::cerr << "[train] wrote " << out_path << " (final loss "
            << result.epoch_loss.back() << ")\n";
  return 0;
}

int cmd_evaluate(const std::string& model_path, const std::string& test_path,
                 const std::string& out_path) {
  const calibre::ModelFile mf =
      calibre::model_from_json(calibre::detail::read_json_file(model_path));
  const calibre::LabeledEmbeddings test = calibre::load_embeddings(test_path);
  const calibre::MetricsReport report = calibre::evaluate(mf.model, test, mf.train_counts);
  const json out = calibre::metrics_to_json(report);
  if (!out_path.empty()) calibre::detail::write_json_file(out, out_path);
  std::cout << out.dump(2) << "\n";
  return 0;
}

json theory_closed_form(const json& cfg, std::uint64_t seed, bool& ok) {
  const auto etas = cfg.value("etas", std::vector<double>{0.1, 0.3});
  const int trials = cfg.value("trials", 2000);
  const auto m = cfg.value("m", static_cast<Index>(2));
  const double sigma = cfg.value("sigma", 1.0);
  const auto raw_counts = cfg.value("counts", std::vector<long>{2000, 1200, 800});

  calibre::GroundTruthModel model;
  model.counts.assign(raw_counts.begin(), raw_counts.end());
  const auto k = static_cast<Index>(model.counts.size());
  model.means = calibre::MatrixXd::Zero(k, m);
  if (cfg.contains("means")) {
    const auto rows = cfg.at("means").get<std::vector<std::vector<double>>>();
    for (Index r = 0; r < k; ++r)
      for (Index c = 0; c < m; ++c)
        model.means(r, c) = rows[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
  } else {
    // fixed default geometry, norms <= 1
    for (Index r = 0; r < k; ++r) {
      model.means(r, 0) = std::cos(2.0 * M_PI * static_cast<double>(r) / static_cast<double>(k));
      if (m > 1)
        model.means(r, 1) = std::sin(2.0 * M_PI * static_cast<double>(r) / static_cast<double>(k));
    }
  }
  model.shared_covariance = sigma * sigma * calibre::MatrixXd::Identity(m, m);

  json cells = json::array();
  for (double eta : etas) {
    calibre::TheoryExperiment exp = calibre::make_theory_experiment(model, eta, 1, 1.0, trials);
    calibre::RandomStream stream =
        calibre::seeded_rng(seed, "closed-form-eta-" + std::to_string(eta));
    const calibre::MeanErrorReport mc = calibre::mean_error_mc(exp, stream);

    double worst = 0.0;
    for (int c = 0; c < model.num_classes(); ++c) {
      const calibre::VectorXd want = calibre::expected_noisy_mean(model, eta, c);
      for (Index j = 0; j < m; ++j) {
        const double se = mc.mc_mean_se(c, j);
        const double z = se > 0.0 ? std::abs(mc.mc_mean(c, j) - want(j)) / se : 0.0;
        worst = std::max(worst, z);
      }
    }
    json cell;
    cell["eta"] = eta;
    cell["max_abs_z"] = worst;
    cell["pass"] = worst <= 3.0;
    ok = ok && worst <= 3.0;
    cells.push_back(cell);
  }
  json out;
  out["trials"] = trials;
  out["cells"] = cells;
  return out;
}

json theory_grid(const json& cfg, std::uint64_t seed, bool& ok) {
  calibre::ScalingGridConfig grid;
  if (cfg.contains("etas")) grid.etas = cfg.at("etas").get<std::vector<double>>();
  if (cfg.contains("n_tails")) {
    const auto v = cfg.at("n_tails").get<std::vector<long>>();
    grid.n_tails.assign(v.begin(), v.end());
  }
  grid.m = cfg.value("m", grid.m);
  grid.sigma = cfg.value("sigma", grid.sigma);
  grid.n_head = cfg.value("n_head", grid.n_head);
  grid.head_distance = cfg.value("head_distance", grid.head_distance);
  grid.trials = cfg.value("trials", grid.trials);
  grid.q = cfg.value("q", grid.q);
  grid.tau = cfg.value("tau", grid.tau);

  calibre::RandomStream stream = calibre::seeded_rng(seed, "scaling-grid");
  const calibre::ScalingFitReport fit = calibre::bound_scaling_check(grid, stream);

  json out;
  out["fit"] = {{"intercept", fit.intercept},
                {"eta2_coef", fit.eta2_coef},
                {"m_over_n_coef", fit.m_over_n_coef},
                {"r_squared", fit.r_squared}};
  json mse = json::array();
  for (Index r = 0; r < fit.cell_mse.rows(); ++r) {
    json row = json::array();
    for (Index c = 0; c < fit.cell_mse.cols(); ++c) row.push_back(fit.cell_mse(r, c));
    mse.push_back(row);
  }
  out["cell_mse"] = mse;
  const bool pass = fit.r_squared >= 0.95 && fit.eta2_coef > 0.0 && fit.m_over_n_coef > 0.0;
  out["pass"] = pass;
  ok = ok && pass;
  return out;
}

json theory_regime(const json& cfg, std::uint64_t seed, bool& ok) {
  const auto n_tail = cfg.value("n_tail", static_cast<Index>(20));
  const auto n_head = cfg.value("n_head", static_cast<Index>(2000));
  const int head_count = cfg.value("head_count", 4);
  const int q = cfg.value("q", 4);
  const double tau = cfg.value("tau", 1.0);
  const double eta = cfg.value("eta", 0.1);
  const auto m = cfg.value("m", static_cast<Index>(8));
  const double sigma = cfg.value("sigma", 1.0);
  const int trials = cfg.value("trials", 500);

  // delta_q = 0: every class mean at the origin.
  calibre::GroundTruthModel model;
  model.means = calibre::MatrixXd::Zero(head_count + 1, m);
  model.shared_covariance = sigma * sigma * calibre::MatrixXd::Identity(m, m);
  model.counts.assign(static_cast<std::size_t>(head_count), n_head);
  model.counts.push_back(n_tail);

  calibre::TheoryExperiment exp = calibre::make_theory_experiment(model, eta, q, tau, trials);
  calibre::RandomStream stream = calibre::seeded_rng(seed, "regime");
  const calibre::MeanErrorReport mc = calibre::mean_error_mc(exp, stream);
  const auto tail = static_cast<std::size_t>(head_count);

  json out;
  out["delta_q"] = exp.delta_q;
  out["vanilla_mse"] = mc.vanilla_mse[tail];
  out["calibrated_mse"] = mc.calibrated_mse[tail];
  out["win_fraction"] = mc.calibrated_win_fraction[tail];
  const bool pass = mc.calibrated_win_fraction[tail] >= 0.95 &&
                    mc.calibrated_mse[tail] < mc.vanilla_mse[tail];
  out["pass"] = pass;
  ok = ok && pass;
  return out;
}

int cmd_verify_theory(const std::string& config_path, const std::string& out_path,
                      std::uint64_t seed) {
  json cfg = json::object();
  if (!config_path.empty()) cfg = calibre::detail::read_json_file(config_path);

  bool ok = true;
  json report;
  report["closed_form"] = theory_closed_form(cfg.value("closed_form", json::object()), seed, ok);
  report["grid"] = theory_grid(cfg.value("grid", json::object()), seed, ok);
  report["regime"] = theory_regime(cfg.value("regime", json::object()), seed, ok);
  report["pass"] = ok;
  if (!out_path.empty()) calibre::detail::write_json_file(report, out_path);
  std::cout << report.dump(2) << "\n";
  return ok ? 0 : 1;
}

int cmd_run(const std::string& config_path, std::optional<std::uint64_t> seed,
            const std::string& out_dir, const std::vector<std::string>& ablate_tokens,
            const std::string& dump_lof) {
  calibre::PipelineConfig cfg = calibre::load_pipeline_config(config_path);
  if (seed) cfg.seed = *seed;
  if (!out_dir.empty()) cfg.out_dir = out_dir;

  calibre::AblationFlags ablate;
  for (const auto& token : ablate_tokens) ablate.apply(token);

  const calibre::PipelineResult result = calibre::run_pipeline(
      cfg, ablate, dump_lof.empty() ? std::nullopt : std::optional<std::string>(dump_lof));
  std::cout << result.metrics_json.dump(2) << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Gaussian representation calibration toolkit"};
  app.require_subcommand(1);

  // simulate
  std::string sim_in, sim_synth, sim_out, sim_sidecar;
  double sim_rho = 1.0, sim_eta = 0.0, sim_mean_scale = 1.0, sim_sigma = 1.0;
  std::uint64_t sim_seed = 0;
  long sim_base = 0;
  auto* sim = app.add_subcommand("simulate", "Long-tail subsampling and label-noise injection");
  sim->add_option("--in", sim_in, "Input embeddings CSV");
  sim->add_option("--synthetic", sim_synth, "Generate Gaussian data: m,K,counts-file");
  sim->add_option("--out", sim_out, "Output CSV")->required();
  sim->add_option("--rho", sim_rho, "Imbalance ratio (<=1 keeps sizes)");
  sim->add_option("--eta", sim_eta, "Noise rate in [0,1)");
  sim->add_option("--seed", sim_seed, "RNG seed");
  sim->add_option("--base-count", sim_base, "Largest class size before decay (default: min class)");
  sim->add_option("--mean-scale", sim_mean_scale, "Synthetic mean scale");
  sim->add_option("--sigma", sim_sigma, "Synthetic shared stddev");
  sim->add_option("--sidecar", sim_sidecar, "Sidecar JSON path");

  // calibrate
  std::string cal_in, cal_cfg, cal_out, cal_dump;
  int cal_lof_k = -1;
  double cal_lof_thr = -1.0;
  auto* cal = app.add_subcommand("calibrate", "LOF filtering and Gaussian calibration");
  cal->add_option("--in", cal_in, "Input embeddings CSV")->required();
  cal->add_option("--config", cal_cfg, "JSON config (calibrate section)");
  cal->add_option("--out", cal_out, "Output stats JSON")->required();
  cal->add_option("--lof-k", cal_lof_k, "LOF neighbor count override");
  cal->add_option("--lof-threshold", cal_lof_thr, "LOF score cutoff override");
  cal->add_option("--dump-lof", cal_dump, "Write per-point LOF scores CSV");

  // sample
  std::string smp_stats, smp_in, smp_out, smp_mask, smp_target = "max";
  std::uint64_t smp_seed = 0;
  auto* smp = app.add_subcommand("sample", "Balance classes with calibrated Gaussian draws");
  smp->add_option("--stats", smp_stats, "stats JSON from calibrate")->required();
  smp->add_option("--in", smp_in, "Input embeddings CSV")->required();
  smp->add_option("--out", smp_out, "Output CSV")->required();
  smp->add_option("--mask", smp_mask, "Synthetic-mask CSV path");
  smp->add_option("--target", smp_target, "Per-class target: max or an integer");
  smp->add_option("--seed", smp_seed, "RNG seed");

  // train
  std::string trn_in, trn_anchors, trn_mask, trn_cfg, trn_out;
  std::uint64_t trn_seed = 0;
  auto* trn = app.add_subcommand("train", "Train the adapter + linear head probe");
  trn->add_option("--in", trn_in, "Training embeddings CSV")->required();
  trn->add_option("--anchors", trn_anchors, "Anchor embeddings CSV (prefix of --in rows)");
  trn->add_option("--mask", trn_mask, "Synthetic-mask CSV from sample");
  trn->add_option("--config", trn_cfg, "JSON config (train section)");
  trn->add_option("--out", trn_out, "Output model JSON")->required();
  trn->add_option("--seed", trn_seed, "RNG seed");

  // evaluate
  std::string ev_model, ev_test, ev_out;
  auto* ev = app.add_subcommand("evaluate", "Accuracy metrics on clean test data");
  ev->add_option("--model", ev_model, "Model JSON")->required();
  ev->add_option("--test", ev_test, "Test embeddings CSV")->required();
  ev->add_option("--out", ev_out, "Metrics JSON path");

  // verify-theory
  std::string th_cfg, th_out;
  std::uint64_t th_seed = 0;
  auto* th = app.add_subcommand("verify-theory", "Monte-Carlo checks of the estimation bounds");
  th->add_option("--config", th_cfg, "Theory config JSON");
  th->add_option("--out", th_out, "Report JSON path");
  th->add_option("--seed", th_seed, "RNG seed");

  // run
  std::string run_cfg, run_out_dir, run_dump;
  std::vector<std::string> run_ablate;
  std::uint64_t run_seed = 0;
  bool run_seed_set = false;
  auto* run = app.add_subcommand("run", "Full pipeline from a JSON config");
  run->add_option("--config", run_cfg, "Pipeline config JSON")->required();
  auto* seed_opt = run->add_option("--seed", run_seed, "Seed override");
  run->add_option("--out-dir", run_out_dir, "Output directory override");
  run->add_option("--ablate", run_ablate, "Remove components: cl-anchor,dc,mixup,reg,all")
      ->delimiter(',');
  run->add_option("--dump-lof", run_dump, "Write per-point LOF scores CSV");

  CLI11_PARSE(app, argc, argv);
  run_seed_set = seed_opt->count() > 0;

  try {
    if (sim->parsed())
      return cmd_simulate(sim_in, sim_synth, sim_out, sim_rho, sim_eta, sim_seed, sim_base,
                          sim_mean_scale, sim_sigma, sim_sidecar);
    if (cal->parsed())
      return cmd_calibrate(cal_in, cal_cfg, cal_out,
                           cal_lof_k > 0 ? std::optional<int>(cal_lof_k) : std::nullopt,
                           cal_lof_thr > 0 ? std::optional<double>(cal_lof_thr) : std::nullopt,
                           cal_dump);
    if (smp->parsed()) return cmd_sample(smp_stats, smp_in, smp_out, smp_mask, smp_target, smp_seed);
    if (trn->parsed()) return cmd_train(trn_in, trn_anchors, trn_mask, trn_cfg, trn_out, trn_seed);
    if (ev->parsed()) return cmd_evaluate(ev_model, ev_test, ev_out);
    if (th->parsed()) return cmd_verify_theory(th_cfg, th_out, th_seed);
    if (run->parsed())
      return cmd_run(run_cfg, run_seed_set ? std::optional<std::uint64_t>(run_seed) : std::nullopt,
                     run_out_dir, run_ablate, run_dump);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
