#pragma once

// Disentanglement metrics, unsupervised diagnostics and downstream-task
// evaluation. Each metric comes in two forms: one that samples from a
// ground-truth model (needed for the intervention-based scores) and one that
// works on given (factors, representations) samples, which also serves the
// external-table path.

#include <cstddef>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "disent/factor_models.hpp"
#include "disent/impossibility.hpp"
#include "disent/rng.hpp"
#include "disent/stats.hpp"
#include "disent/vae.hpp"

namespace disent {

/// r(x): maps a batch to an (n x D) matrix. Representations that read the
/// factors directly (oracles) skip rendering.
class RepresentationFunction {
 public:
  virtual ~RepresentationFunction() = default;
  virtual bool uses_observations() const { return true; }
  /// `observations` is empty when uses_observations() is false.
  virtual Eigen::MatrixXd apply(const std::vector<FactorVector>& factors,
                                const std::vector<Observation>& observations, Rng& rng) const = 0;
};

/// r(x) = z, the factor values as reals.
class IdentityRepresentation : public RepresentationFunction {
 public:
  bool uses_observations() const override { return false; }
  Eigen::MatrixXd apply(const std::vector<FactorVector>& factors, const std::vector<Observation>&,
                        Rng&) const override;
};

class ConstantRepresentation : public RepresentationFunction {
 public:
  explicit ConstantRepresentation(std::size_t dim, double value = 0.0) : dim_(dim), value_(value) {}
  bool uses_observations() const override { return false; }
  Eigen::MatrixXd apply(const std::vector<FactorVector>& factors, const std::vector<Observation>&,
                        Rng&) const override;

 private:
  std::size_t dim_;
  double value_;
};

/// Standard-normal noise independent of the input.
class NoiseRepresentation : public RepresentationFunction {
 public:
  explicit NoiseRepresentation(std::size_t dim) : dim_(dim) {}
  bool uses_observations() const override { return false; }
  Eigen::MatrixXd apply(const std::vector<FactorVector>& factors, const std::vector<Observation>&,
                        Rng& rng) const override;

 private:
  std::size_t dim_;
};

/// Deterministic function of the factors.
class FactorFunctionRepresentation : public RepresentationFunction {
 public:
  using Fn = std::function<Eigen::VectorXd(const FactorVector&)>;
  explicit FactorFunctionRepresentation(Fn fn) : fn_(std::move(fn)) {}
  bool uses_observations() const override { return false; }
  Eigen::MatrixXd apply(const std::vector<FactorVector>& factors, const std::vector<Observation>&,
                        Rng&) const override;

 private:
  Fn fn_;
};

/// Encoder mean or a posterior sample of a trained VAE.
class VaeRepresentation : public RepresentationFunction {
 public:
  VaeRepresentation(const VaeModel& model, RepresentationMode mode) : model_(&model), mode_(mode) {}
  Eigen::MatrixXd apply(const std::vector<FactorVector>& factors, const std::vector<Observation>& observations,
                        Rng& rng) const override;

 private:
  const VaeModel* model_;
  RepresentationMode mode_;
};

/// z_k -> Phi^-1((z_k + 0.5) / cardinality_k): factors mapped to normal scores.
Eigen::VectorXd normal_scores(const FactorVector& z, const FactorSpace& space);
/// Normal scores pushed through an entangler with standard-normal marginals.
std::unique_ptr<RepresentationFunction> entangled_representation(const FactorSpace& space,
                                                                 HouseholderEntangler entangler);
std::unique_ptr<RepresentationFunction> normal_score_representation(const FactorSpace& space);

/// Renders (if needed) and applies `rep` to `factors`.
Eigen::MatrixXd represent(const GroundTruthModel& model, const RepresentationFunction& rep,
                          const std::vector<FactorVector>& factors, Rng& rng);

struct MetricReport {
  double score = 0.0;
  std::map<std::string, double> values;
  std::map<std::string, Eigen::MatrixXd> matrices;
  std::vector<std::string> flags;

  bool has_flag(const std::string& f) const;
};

// --- intervention-based metrics -----------------------------------------------------

struct BetaVaeMetricConfig {
  std::size_t n_train = 10000;
  std::size_t n_test = 5000;
  std::size_t batch = 64;
  /// Inverse regularization of the logistic classifier.
  double inverse_regularization = 1.0;
};

MetricReport beta_vae_metric(const GroundTruthModel& model, const RepresentationFunction& rep, Rng& rng,
                             const BetaVaeMetricConfig& cfg = {});

enum class CollapsePolicy {
  kError,  // every dimension pruned -> InputError("all dimensions collapsed")
  kChance  // fall back to predicting the most frequent training factor
};

struct FactorVaeMetricConfig {
  std::size_t n_train = 10000;
  std::size_t n_test = 5000;
  std::size_t batch = 64;
  std::size_t n_variance = 10000;
  double prune_variance = 0.05;
  CollapsePolicy collapse = CollapsePolicy::kError;
};

MetricReport factor_vae_metric(const GroundTruthModel& model, const RepresentationFunction& rep, Rng& rng,
                               const FactorVaeMetricConfig& cfg = {});

// --- sample-based metrics -----------------------------------------------------------

struct Sample {
  Eigen::MatrixXi factors;          // n x K
  Eigen::MatrixXd representations;  // n x D
};

Sample draw_sample(const GroundTruthModel& model, const RepresentationFunction& rep, std::size_t n, Rng& rng);

/// (D x K) plug-in MI between binned representation dims and factors.
Eigen::MatrixXd mutual_information_matrix(const Eigen::MatrixXd& reps, const Eigen::MatrixXi& factors, int bins);

/// `factor_entropies` holds H(z_k); pass ln(cardinality) for the uniform grid.
MetricReport mig_from_sample(const Sample& s, const std::vector<double>& factor_entropies, int bins = 20);
MetricReport modularity_from_mi(const Eigen::MatrixXd& mi);
MetricReport modularity_from_sample(const Sample& s, int bins = 20);
/// R is (K x D), rows = factors.
MetricReport dci_from_importance(const Eigen::MatrixXd& r);
MetricReport dci_from_samples(const Sample& train, const Sample& test, const std::vector<int>& cardinalities,
                              TreeEnsembleConfig trees = {});
MetricReport sap_from_samples(const Sample& train, const Sample& test, const std::vector<int>& cardinalities,
                              double strength = 0.01);

struct SampleMetricConfig {
  std::size_t n = 10000;
  std::size_t n_train = 10000;
  std::size_t n_test = 5000;
  int bins = 20;
  bool empirical_entropy = false;  // MIG: H(z_k) estimated instead of ln(cardinality)
  TreeEnsembleConfig trees{};
};

MetricReport mig(const GroundTruthModel& model, const RepresentationFunction& rep, Rng& rng,
                 const SampleMetricConfig& cfg = {});
MetricReport modularity(const GroundTruthModel& model, const RepresentationFunction& rep, Rng& rng,
                        const SampleMetricConfig& cfg = {});
MetricReport dci_disentanglement(const GroundTruthModel& model, const RepresentationFunction& rep, Rng& rng,
                                 const SampleMetricConfig& cfg = {});
MetricReport sap(const GroundTruthModel& model, const RepresentationFunction& rep, Rng& rng,
                 const SampleMetricConfig& cfg = {});

// --- diagnostics --------------------------------------------------------------------

inline constexpr double kCovarianceJitter = 1e-10;

struct GaussianTc {
  double value = 0.0;
  bool jittered = false;
};

/// TC of the Gaussian fitted to the rows of `points`:
/// 0.5 * (sum_j log S_jj - log det S). A (near-)singular S gets 1e-10 I added
/// and is flagged; if it is still singular the call throws.
GaussianTc gaussian_total_correlation(const Eigen::MatrixXd& points);

/// Mean plug-in MI over all unordered column pairs after equal-width binning.
double average_pairwise_mi(const Eigen::MatrixXd& points, int bins = 20);

enum class Learner { kLogistic, kTree };
std::string to_string(Learner l);
Learner learner_from_string(const std::string& s);

struct DownstreamConfig {
  Learner learner = Learner::kLogistic;
  std::vector<std::size_t> train_sizes{10, 100, 1000, 10000};
  std::size_t n_test = 5000;
  /// Efficiency = acc(efficiency_small) / acc(largest train size).
  std::size_t efficiency_small = 100;
  TreeEnsembleConfig trees{};
  std::uint64_t cv_seed = 0;
};

struct DownstreamReport {
  std::map<std::size_t, double> accuracy;  // train size -> mean over factors
  std::map<std::size_t, std::vector<double>> per_factor;
  std::size_t efficiency_small = 0;
  std::size_t efficiency_large = 0;
  double efficiency = 0.0;
  std::vector<std::string> flags;
};

double statistical_efficiency(double acc_small, double acc_large);

/// Training sets are the leading rows of `pool`.
DownstreamReport downstream_from_samples(const Sample& pool, const Sample& test, const std::vector<int>& cardinalities,
                                         const DownstreamConfig& cfg);
DownstreamReport downstream_eval(const GroundTruthModel& model, const RepresentationFunction& rep, Rng& rng,
                                 const DownstreamConfig& cfg = {});

struct UnsupervisedScores {
  double recon = 0.0;
  double kl = 0.0;
  double elbo = 0.0;
  double tc_mean = 0.0;
  double tc_sampled = 0.0;
  double mi_mean = 0.0;
  double mi_sampled = 0.0;
  std::vector<std::string> flags;
};

UnsupervisedScores unsupervised_scores(const VaeModel& vae, const GroundTruthModel& data, Rng& rng,
                                       std::size_t n = 10000, int bins = 20);

// --- bundled evaluation -------------------------------------------------------------

inline const std::vector<std::string> kMetricNames = {"beta_vae_score", "factor_vae_score", "mig",
                                                      "modularity",     "dci_disentanglement", "sap"};

struct MetricSettings {
  BetaVaeMetricConfig beta_vae{};
  FactorVaeMetricConfig factor_vae{};
  SampleMetricConfig sample{};
  std::vector<DownstreamConfig> downstream{};

  /// The documented defaults (10000 / 5000 points, both learners).
  static MetricSettings standard();
  /// Smaller sample counts for sweeps on one core; downstream capped at 2500.
  static MetricSettings desk();
};

struct MetricScores {
  std::map<std::string, std::optional<double>> scores;  // one entry per requested metric
  std::map<std::string, std::string> unavailable;       // metric -> reason
  std::map<std::string, DownstreamReport> downstream;   // learner -> report
};

/// Evaluates `metrics` (names from kMetricNames; empty = all). Each metric
/// draws from its own child stream of `seed`, so results do not depend on
/// which other metrics are requested.
MetricScores evaluate_metrics(const GroundTruthModel& model, const RepresentationFunction& rep, std::uint64_t seed,
                              const MetricSettings& settings, const std::vector<std::string>& metrics = {});

/// Table mode: interventional metrics are reported unavailable. The last
/// third of the rows is the test split; H(z_k) is estimated.
MetricScores evaluate_table(const ExternalTable& table, std::uint64_t seed, const MetricSettings& settings,
                            const std::vector<std::string>& metrics = {});

}  // namespace disent
