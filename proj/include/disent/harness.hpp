#pragma once

// Sweep execution, run records and the cross-run analyses.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "disent/factor_models.hpp"
#include "disent/metrics.hpp"
#include "disent/rng.hpp"
#include "disent/vae.hpp"
#include "json.hpp"

namespace disent {

inline constexpr int kRecordSchemaVersion = 1;

inline const std::vector<std::string> kUnsupervisedNames = {"recon",   "kl",         "elbo",   "tc_mean",
                                                            "tc_sampled", "mi_mean", "mi_sampled"};

struct DatasetSpec {
  std::string name = "micro_sprites";
  Variant variant = Variant::kNone;

  /// "micro_sprites" or "micro_sprites/noise".
  std::string label() const;
};

struct ObjectiveSweep {
  ObjectiveKind kind = ObjectiveKind::kBetaVae;
  std::vector<double> values;  // the objective's sweep grid unless overridden
};

struct ExperimentConfig {
  std::string preset = "desk";  // desk | paper
  std::uint64_t base_seed = 0;
  std::size_t seeds = 5;
  std::vector<DatasetSpec> datasets{DatasetSpec{}};
  std::vector<ObjectiveSweep> objectives;
  VaeArchitecture architecture = VaeArchitecture::desk();
  TrainingConfig training = TrainingConfig::desk();
  std::vector<std::string> metrics;  // empty = all
  MetricSettings evaluation = MetricSettings::desk();
  bool unsupervised = true;
  std::size_t unsupervised_samples = 5000;
  std::filesystem::path output_dir = "runs";
  std::size_t workers = 1;  // 0 = one per hardware thread

  /// Every objective over its grid, desk or paper constants.
  static ExperimentConfig preset_config(const std::string& preset);
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  void validate() const;
};

struct RunSpec {
  std::size_t run_index = 0;
  DatasetSpec dataset;
  ObjectiveConfig objective;
  std::size_t seed = 0;         // seed index within the sweep
  std::uint64_t run_seed = 0;   // derive_seed(base_seed, run_index)
};

/// Runs in (dataset, objective, value, seed) order.
std::vector<RunSpec> enumerate_runs(const ExperimentConfig& cfg);

struct RunRecord {
  int schema_version = kRecordSchemaVersion;
  std::size_t run_index = 0;
  std::string dataset;
  std::string objective;
  std::string hyperparameter;
  double value = 0.0;
  std::size_t seed = 0;
  std::uint64_t run_seed = 0;
  long steps = 0;
  double wall_time_s = 0.0;
  std::string status = "ok";  // ok | error
  std::string error;
  std::optional<long> error_step;
  std::map<std::string, double> error_terms;
  std::map<std::string, std::optional<double>> metrics;       // every name in kMetricNames
  std::map<std::string, std::optional<double>> unsupervised;  // every name in kUnsupervisedNames
  /// learner -> {"<train size>": accuracy, "efficiency": ratio}
  std::map<std::string, std::map<std::string, double>> downstream;

  nlohmann::json to_json() const;
  static RunRecord from_json(const nlohmann::json& j);

  /// Looks up a score: a metric name, an unsupervised name, or
  /// "downstream.<learner>.<size|efficiency>".
  std::optional<double> score(const std::string& key) const;
  bool ok() const { return status == "ok"; }
};

/// Fills metric, unsupervised and downstream fields for a trained model.
void evaluate_into(RunRecord& record, const TrainedModel& model, const GroundTruthModel& data, std::uint64_t seed,
                   const MetricSettings& settings, const std::vector<std::string>& metrics, bool unsupervised,
                   std::size_t unsupervised_samples);

/// Trains and evaluates one run; never throws for failures inside the run.
RunRecord execute_run(const RunSpec& spec, const ExperimentConfig& cfg);

using ProgressFn = std::function<void(const RunRecord&, std::size_t done, std::size_t total)>;

/// Executes every run on a bounded worker pool and appends records to
/// output_dir/records.jsonl in run-index order. The output is opened before
/// any training; failure to open it throws immediately.
std::vector<RunRecord> run_sweep(const ExperimentConfig& cfg, const ProgressFn& progress = {});

/// Record payload with wall_time_s removed, for determinism comparisons.
nlohmann::json deterministic_payload(const RunRecord& r);

// --- analyses -----------------------------------------------------------------------

/// Canonical order (dataset, objective, value, seed, run_index) used by every
/// analysis so that results do not depend on input order.
std::vector<RunRecord> canonical_order(std::vector<RunRecord> records);

struct CorrelationMatrix {
  std::vector<std::string> keys;
  std::vector<std::vector<std::optional<double>>> rho;  // nullopt: constant column
  std::vector<std::vector<std::size_t>> counts;
};

/// Spearman correlations between score keys over successful records. A key
/// of the form "score@dataset" pivots records across data sets, pairing runs
/// by (objective, value, seed); keys must be all plain or all qualified.
CorrelationMatrix rank_correlation_matrix(const std::vector<RunRecord>& records, const std::vector<std::string>& keys);

struct VarianceDecomposition {
  double r2_model = 0.0;
  double r2_model_x_reg = 0.0;
  bool rank_deficient = false;
  std::size_t records = 0;
};

VarianceDecomposition variance_decomposition(const std::vector<RunRecord>& records, const std::string& score_key);

enum class TransferMode { kSameMetricSameDataset, kSameMetricDiffDataset, kDiffMetricSameDataset, kDiffMetricDiffDataset };

std::string to_string(TransferMode m);
/// Accepts "same-metric,same-dataset" style strings.
TransferMode transfer_mode_from_string(const std::string& s);

struct TransferResult {
  double probability = 0.0;
  std::size_t trials = 0;
  std::size_t skipped = 0;
};

/// Fraction of trials where the setting chosen on (seed, metric, data set)
/// scores at least as well as a random setting on the target (metric, data
/// set) at a different seed.
TransferResult transfer_selection_probability(const std::vector<RunRecord>& records,
                                              const std::vector<std::string>& metric_keys, TransferMode mode,
                                              std::size_t trials, Rng& rng);

// --- export -------------------------------------------------------------------------

enum class ExportFormat { kJsonl, kCsv };
ExportFormat export_format_from_string(const std::string& s);

/// "objective=beta_vae,seed=0" style filter on record fields.
struct Selection {
  std::vector<std::pair<std::string, std::string>> terms;
  static Selection parse(const std::string& s);
  bool matches(const RunRecord& r) const;
};

std::vector<RunRecord> select(const std::vector<RunRecord>& records, const Selection& selection);

/// Column names of the CSV layout for the current schema version, including
/// one column per downstream entry present in `records`.
std::vector<std::string> csv_columns(const std::vector<RunRecord>& records);

/// Floats are written with 9 significant digits.
void export_records(const std::vector<RunRecord>& records, ExportFormat format, const std::filesystem::path& path);
std::vector<RunRecord> import_records(const std::filesystem::path& path);
/// Reads a records file written by run_sweep (full precision JSON lines).
std::vector<RunRecord> load_records(const std::filesystem::path& path);

/// Value rounded to 9 significant digits.
double round_sig9(double v);

}  // namespace disent
