// Command-line front end: data previews, the entanglement demo, training,
// evaluation, sweeps and the record analyses.

#include <cmath>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "disent/errors.hpp"
#include "disent/factor_models.hpp"
#include "disent/harness.hpp"
#include "disent/impossibility.hpp"
#include "disent/metrics.hpp"
#include "disent/stats.hpp"
#include "disent/vae.hpp"
#include "json.hpp"

using nlohmann::json;
using namespace disent;

namespace {

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ','))
    if (!item.empty()) out.push_back(item);
  return out;
}

void emit(const json& j, const std::string& out_path) {
  if (out_path.empty()) {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream out(out_path, std::ios::trunc);
  if (!out) throw InputError("cannot write " + out_path);
  out << j.dump(2) << "\n";
}

json optional_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

MetricSettings settings_by_name(const std::string& name) {
  if (name == "desk") return MetricSettings::desk();
  if (name == "standard") return MetricSettings::standard();
  throw ConfigError("settings must be 'desk' or 'standard'");
}

std::vector<std::string> metric_list(const std::string& s) {
  if (s.empty() || s == "all") return {};
  return split_list(s);
}

std::vector<std::string> expand_keys(const std::string& s, const std::vector<RunRecord>& records) {
  std::vector<std::string> keys;
  for (const auto& k : split_list(s)) {
    if (k == "metrics") {
      keys.insert(keys.end(), kMetricNames.begin(), kMetricNames.end());
    } else if (k == "unsupervised") {
      keys.insert(keys.end(), kUnsupervisedNames.begin(), kUnsupervisedNames.end());
    } else if (k == "downstream") {
      std::set<std::string> found;
      for (const auto& r : records)
        for (const auto& [l, entries] : r.downstream)
          for (const auto& [e, v] : entries) found.insert("downstream." + l + "." + e);
      keys.insert(keys.end(), found.begin(), found.end());
    } else {
      keys.push_back(k);
    }
  }
  return keys;
}

json entangle_report(std::size_t d, double alpha, std::size_t n, const std::string& marginal, std::uint64_t seed) {
  const Marginal m = marginal == "normal" ? Marginal::kStandardNormal : Marginal::kUniform;
  if (marginal != "normal" && marginal != "uniform") throw ConfigError("marginal must be 'uniform' or 'normal'");
  const auto f = HouseholderEntangler::build(d, alpha, {m});
  const Eigen::MatrixXd a = f.matrix();
  const double orth = (a.transpose() * a - Eigen::MatrixXd::Identity(d, d)).cwiseAbs().maxCoeff();

  Rng root(seed);
  Rng ks_rng = root.split(0);
  const auto inv = marginal_invariance_report(f, n, ks_rng);

  Rng point_rng = root.split(1);
  const Eigen::MatrixXd points = f.sample_prior(100, point_rng);
  double min_abs_jacobian = std::numeric_limits<double>::infinity();
  double max_roundtrip = 0.0;
  for (Eigen::Index i = 0; i < points.rows(); ++i) {
    const Eigen::VectorXd z = points.row(i).transpose();
    const Eigen::MatrixXd j = f.empirical_jacobian(z, 1e-6);
    min_abs_jacobian = std::min(min_abs_jacobian, j.cwiseAbs().minCoeff());
    const Eigen::VectorXd back = f.apply(f.apply(z), Direction::kInverse);
    max_roundtrip = std::max(max_roundtrip, (back - z).cwiseAbs().maxCoeff());
  }
  json matrix = json::array();
  for (Eigen::Index r = 0; r < a.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < a.cols(); ++c) row.push_back(a(r, c));
    matrix.push_back(row);
  }
  return {{"dimension", d},
          {"alpha", alpha},
          {"marginal", marginal},
          {"matrix", matrix},
          {"orthogonality_error", orth},
          {"invariance", {{"samples", inv.samples}, {"ks", inv.ks}, {"threshold", inv.threshold}, {"passed", inv.passed}}},
          {"jacobian", {{"points", points.rows()}, {"min_abs_entry", min_abs_jacobian}, {"dense", min_abs_jacobian > 1e-6}}},
          {"roundtrip_max_error", max_roundtrip}};
}

json scores_json(const MetricScores& s) {
  json scores = json::object(), unavailable = json::object(), downstream = json::object();
  for (const auto& [k, v] : s.scores) scores[k] = optional_json(v);
  for (const auto& [k, v] : s.unavailable) unavailable[k] = v;
  for (const auto& [learner, r] : s.downstream) {
    json acc = json::object();
    for (const auto& [size, a] : r.accuracy) acc[std::to_string(size)] = a;
    downstream[learner] = {{"accuracy", acc}, {"efficiency", r.efficiency}, {"flags", r.flags}};
  }
  return {{"metrics", scores}, {"unavailable", unavailable}, {"downstream", downstream}};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Disentanglement workbench"};
  app.require_subcommand(1);

  // dataset preview
  auto* dataset = app.add_subcommand("dataset", "Ground-truth data sets");
  dataset->require_subcommand(1);
  auto* preview = dataset->add_subcommand("preview", "Write sample observations as .npy arrays");
  std::string preview_model = "micro_sprites", preview_variant = "none", preview_out;
  std::size_t preview_count = 16;
  std::uint64_t preview_seed = 0;
  preview->add_option("--model", preview_model, "Data set name");
  preview->add_option("--variant", preview_variant, "none | color | noise | patch");
  preview->add_option("--count", preview_count, "Number of observations");
  preview->add_option("--seed", preview_seed, "Sampling seed");
  preview->add_option("--out", preview_out, "Output directory")->required();

  // entangle demo
  auto* entangle = app.add_subcommand("entangle", "Prior-preserving entanglers");
  entangle->require_subcommand(1);
  auto* demo = entangle->add_subcommand("demo", "Invariance report and Jacobian summary");
  std::size_t demo_d = 2, demo_n = 10000;
  double demo_alpha = 0.25;
  std::string demo_marginal = "uniform", demo_out;
  std::uint64_t demo_seed = 0;
  demo->add_option("--d", demo_d, "Dimension")->check(CLI::Range(2, 64));
  demo->add_option("--alpha", demo_alpha, "Reflection parameter in (0, 1)");
  demo->add_option("--n", demo_n, "Samples for the KS report");
  demo->add_option("--marginal", demo_marginal, "uniform | normal");
  demo->add_option("--seed", demo_seed, "Seed");
  demo->add_option("--out", demo_out, "Report path (stdout if omitted)");

  // train
  auto* train = app.add_subcommand("train", "Train one model and write a checkpoint");
  std::string train_objective = "beta_vae", train_model_name = "micro_sprites", train_variant = "none", train_out,
              train_preset = "desk";
  double train_value = std::nan("");
  std::uint64_t train_seed = 0;
  long train_steps = 0;
  std::size_t train_batch = 0;
  train->add_option("--objective", train_objective, "beta_vae | annealed_vae | factor_vae | beta_tcvae | dip_vae_i | dip_vae_ii");
  train->add_option("--value", train_value, "Hyperparameter value (smallest grid value if omitted)");
  train->add_option("--model", train_model_name, "Data set name");
  train->add_option("--variant", train_variant, "none | color | noise | patch");
  train->add_option("--seed", train_seed, "Training seed");
  train->add_option("--preset", train_preset, "desk | paper");
  train->add_option("--steps", train_steps, "Override the preset step count");
  train->add_option("--batch-size", train_batch, "Override the preset batch size");
  train->add_option("--out", train_out, "Checkpoint directory")->required();

  // evaluate
  auto* evaluate = app.add_subcommand("evaluate", "Score a checkpoint or an external representation table");
  std::string eval_checkpoint, eval_table, eval_metrics = "all", eval_out, eval_settings = "desk";
  std::uint64_t eval_seed = 0;
  bool eval_no_unsupervised = false;
  auto* ck = evaluate->add_option("--checkpoint", eval_checkpoint, "Checkpoint directory");
  auto* tb = evaluate->add_option("--table", eval_table, "CSV with factor_* and rep_* columns");
  ck->excludes(tb);
  evaluate->add_option("--metrics", eval_metrics, "all or a comma-separated list");
  evaluate->add_option("--seed", eval_seed, "Evaluation seed");
  evaluate->add_option("--settings", eval_settings, "desk | standard sample sizes");
  evaluate->add_flag("--no-unsupervised", eval_no_unsupervised, "Skip the unsupervised scores");
  evaluate->add_option("--out", eval_out, "Output path (stdout if omitted)");

  // sweep
  auto* sweep = app.add_subcommand("sweep", "Run a configured sweep");
  std::string sweep_config;
  std::size_t sweep_workers = 0;
  bool sweep_quiet = false;
  sweep->add_option("--config", sweep_config, "Experiment config (JSON)")->required();
  sweep->add_option("--workers", sweep_workers, "Override the worker count");
  sweep->add_flag("--quiet", sweep_quiet, "No progress lines");

  // analyze
  auto* analyze = app.add_subcommand("analyze", "Analyses over a records file");
  analyze->require_subcommand(1);
  std::string an_in = "runs/records.jsonl", an_out, an_select;
  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--in", an_in, "Records file (.jsonl or exported .csv)");
    sub->add_option("--select", an_select, "Filter, e.g. objective=beta_vae,dataset=micro_sprites");
    sub->add_option("--out", an_out, "Output path (stdout if omitted)");
  };
  auto* correlations = analyze->add_subcommand("correlations", "Spearman rank correlations between scores");
  std::string corr_keys = "metrics";
  correlations->add_option("--keys", corr_keys, "metrics | unsupervised | downstream | comma-separated keys");
  add_common(correlations);
  auto* variance = analyze->add_subcommand("variance", "Variance explained by objective and by objective x value");
  std::string var_score = "mig";
  variance->add_option("--score", var_score, "Score key");
  add_common(variance);
  auto* transfer = analyze->add_subcommand("transfer", "Transfer-based model selection against random selection");
  std::string tr_mode = "same-metric,same-dataset", tr_keys = "metrics";
  std::size_t tr_trials = 10000;
  std::uint64_t tr_seed = 0;
  transfer->add_option("--mode", tr_mode, "{same,diff}-metric,{same,diff}-dataset");
  transfer->add_option("--keys", tr_keys, "Metric keys to sample from");
  transfer->add_option("--trials", tr_trials, "Number of trials");
  transfer->add_option("--seed", tr_seed, "Seed");
  add_common(transfer);

  // export
  auto* exporter = app.add_subcommand("export", "Export records to jsonl or csv");
  std::string ex_in = "runs/records.jsonl", ex_format = "csv", ex_out, ex_select;
  exporter->add_option("--in", ex_in, "Records file");
  exporter->add_option("--format", ex_format, "jsonl | csv");
  exporter->add_option("--select", ex_select, "Filter, e.g. objective=beta_vae");
  exporter->add_option("--out", ex_out, "Output file")->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (preview->parsed()) {
      const auto model = GroundTruthModel::by_name(preview_model, variant_from_string(preview_variant));
      Rng rng(preview_seed);
      write_dataset_preview(model, preview_count, rng, preview_out);
      std::cerr << "wrote " << preview_count << " observations to " << preview_out << "\n";
    } else if (demo->parsed()) {
      emit(entangle_report(demo_d, demo_alpha, demo_n, demo_marginal, demo_seed), demo_out);
    } else if (train->parsed()) {
      const auto kind = objective_from_string(train_objective);
      const double value = std::isnan(train_value) ? hyperparameter_grid(kind).front() : train_value;
      const auto cfg = ObjectiveConfig::make(kind, value);
      cfg.validate();
      auto arch = VaeArchitecture::desk();
      auto training = TrainingConfig::desk();
      if (train_preset == "paper") {
        arch = VaeArchitecture::paper();
        training = TrainingConfig::paper();
      } else if (train_preset != "desk") {
        throw ConfigError("preset must be 'desk' or 'paper'");
      }
      if (train_steps > 0) training.steps = train_steps;
      if (train_batch > 0) training.batch_size = train_batch;
      const auto data = GroundTruthModel::by_name(train_model_name, variant_from_string(train_variant));
      const auto model = train_model(cfg, arch, data, train_seed, training);
      save_checkpoint(model, train_out);
      json terms = model.final_terms.as_map();
      std::cout << json{{"checkpoint", train_out}, {"final_terms", terms}}.dump(2) << "\n";
    } else if (evaluate->parsed()) {
      const auto settings = settings_by_name(eval_settings);
      const auto metrics = metric_list(eval_metrics);
      if (!eval_table.empty()) {
        const auto table = load_external_table(eval_table);
        emit(scores_json(evaluate_table(table, eval_seed, settings, metrics)), eval_out);
      } else if (!eval_checkpoint.empty()) {
        const auto model = load_checkpoint(eval_checkpoint);
        const auto data = GroundTruthModel::by_name(model.dataset, model.variant);
        RunRecord r;
        r.dataset = DatasetSpec{model.dataset, model.variant}.label();
        r.objective = to_string(model.objective.kind);
        r.hyperparameter = model.objective.hyperparameter_name();
        r.value = model.objective.value;
        r.run_seed = model.seed;
        r.steps = model.steps;
        evaluate_into(r, model, data, eval_seed, settings, metrics, !eval_no_unsupervised, settings.sample.n);
        emit(r.to_json(), eval_out);
      } else {
        throw UsageError("evaluate needs --checkpoint or --table");
      }
    } else if (sweep->parsed()) {
      auto cfg = ExperimentConfig::load(sweep_config);
      if (sweep_workers > 0) cfg.workers = sweep_workers;
      const auto records = run_sweep(cfg, [&](const RunRecord& r, std::size_t done, std::size_t total) {
        if (sweep_quiet) return;
        std::cerr << "[" << done << "/" << total << "] " << r.dataset << " " << r.objective << " "
                  << r.hyperparameter << "=" << r.value << " seed=" << r.seed << " " << r.status << " ("
                  << r.wall_time_s << " s)\n";
      });
      std::size_t errors = 0;
      for (const auto& r : records) errors += r.ok() ? 0 : 1;
      std::cerr << records.size() << " records, " << errors << " errors, written to "
                << (cfg.output_dir / "records.jsonl").string() << "\n";
    } else if (analyze->parsed()) {
      auto records = import_records(an_in);
      if (!an_select.empty()) records = select(records, Selection::parse(an_select));
      if (correlations->parsed()) {
        const auto m = rank_correlation_matrix(records, expand_keys(corr_keys, records));
        json rho = json::array(), counts = json::array();
        for (std::size_t a = 0; a < m.keys.size(); ++a) {
          json row = json::array();
          for (std::size_t b = 0; b < m.keys.size(); ++b) row.push_back(optional_json(m.rho[a][b]));
          rho.push_back(row);
          counts.push_back(m.counts[a]);
        }
        emit({{"keys", m.keys}, {"rho", rho}, {"counts", counts}}, an_out);
      } else if (variance->parsed()) {
        const auto v = variance_decomposition(records, var_score);
        emit({{"score", var_score},
              {"r2_model", v.r2_model},
              {"r2_model_x_reg", v.r2_model_x_reg},
              {"rank_deficient", v.rank_deficient},
              {"records", v.records}},
             an_out);
      } else {
        Rng rng(tr_seed);
        const auto mode = transfer_mode_from_string(tr_mode);
        const auto t = transfer_selection_probability(records, expand_keys(tr_keys, records), mode, tr_trials, rng);
        emit({{"mode", to_string(mode)}, {"probability", t.probability}, {"trials", t.trials}, {"skipped", t.skipped}},
             an_out);
      }
    } else if (exporter->parsed()) {
      const auto format = export_format_from_string(ex_format);
      auto records = import_records(ex_in);
      if (!ex_select.empty()) records = select(records, Selection::parse(ex_select));
      export_records(records, format, ex_out);
      std::cerr << "exported " << records.size() << " records to " << ex_out << "\n";
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const ConfigError& e) {
    std::cerr << "configuration error: " << e.what() << "\n";
    return 2;
  } catch (const ParseError& e) {
    std::cerr << "parse error: " << e.what() << "\n";
    return 3;
  } catch (const InputError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 3;
  } catch (const TrainingDiverged& e) {
    std::cerr << "training diverged at step " << e.step() << ": " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
