#pragma once

// Classical learners and statistics used by the metrics and the sweep
// analyses. Everything here is deterministic given its inputs and seed.

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

namespace disent {

using Labels = std::vector<int>;

/// Depth-limited regression tree stored as a flat node array.
struct RegressionTree {
  struct Node {
    int feature = -1;  // -1 marks a leaf
    double threshold = 0.0;
    int left = -1, right = -1;
    double value = 0.0;
  };
  std::vector<Node> nodes;

  double predict(const double* row, Eigen::Index stride) const;
};

class ClassifierModel {
 public:
  enum class Kind { kLogistic, kLinearLowReg, kTreeEnsemble };

  Kind kind = Kind::kLogistic;
  int num_classes = 0;
  /// Set when training labels held a single class; predicts that class.
  bool degenerate = false;
  int constant_class = 0;

  // Linear models: inputs are standardized with (mean, scale) before
  // scores = W x + b.
  Eigen::RowVectorXd feature_mean;
  Eigen::RowVectorXd feature_scale;
  Eigen::MatrixXd weights;  // classes x features
  Eigen::VectorXd bias;     // classes
  double inverse_regularization = 0.0;  // C actually used

  // Tree ensemble.
  std::vector<double> initial_scores;
  std::vector<std::vector<RegressionTree>> stages;  // stage -> class -> tree
  double learning_rate = 0.1;
  /// Normalized impurity-decrease importances (empty for linear models).
  Eigen::VectorXd importances;
  bool importances_all_zero = false;

  Eigen::MatrixXd decision_scores(const Eigen::MatrixXd& x) const;
  Labels predict(const Eigen::MatrixXd& x) const;
  double accuracy(const Eigen::MatrixXd& x, const Labels& y) const;
};

/// Number of classes implied by labels: max(y) + 1.
int class_count(const Labels& y);

/// Multinomial logistic regression minimizing
///   C * sum_i -log softmax(W x_i + b)[y_i] + 0.5 ||W||^2
/// over standardized features, solved with damped Newton iterations.
ClassifierModel fit_logistic(const Eigen::MatrixXd& x, const Labels& y, double inverse_regularization,
                             int num_classes = 0);

/// Log-spaced grid of `count` values over [1e-4, 1e4].
std::vector<double> regularization_grid(int count = 10);

/// Picks C from `regularization_grid(n_reg_values)` by mean k-fold accuracy
/// (first best wins), then refits on all data.
ClassifierModel fit_logistic_cv(const Eigen::MatrixXd& x, const Labels& y, int folds = 5, int n_reg_values = 10,
                                std::uint64_t seed = 0, int num_classes = 0);

/// Strongly regularized linear classifier on exactly one feature column
/// (multinomial logistic surrogate, C = strength). The feature is centered
/// but not rescaled.
ClassifierModel fit_linear_low_reg(const Eigen::MatrixXd& x_single, const Labels& y, double strength = 0.01,
                                   int num_classes = 0);

struct TreeEnsembleConfig {
  int stages = 10;
  int depth = 2;
  double learning_rate = 0.1;

  static TreeEnsembleConfig desk() { return {}; }
  /// The reference library's defaults: 100 stages of depth-3 trees.
  static TreeEnsembleConfig paper() { return {100, 3, 0.1}; }
};

/// Multiclass gradient boosting on the softmax log-loss, one regression tree
/// per class and stage. `seed` is accepted for interface symmetry; the fit
/// itself uses no randomness.
ClassifierModel fit_tree_ensemble(const Eigen::MatrixXd& x, const Labels& y, TreeEnsembleConfig config = {},
                                  std::uint64_t seed = 0, int num_classes = 0);

/// Equal-width histogram bin index over [min, max] of the values.
std::vector<int> bin_values(std::span<const double> values, int bins);

/// Plug-in entropy (nats) of a discrete sample.
double discrete_entropy(std::span<const int> labels);
/// Plug-in mutual information (nats) between two discrete samples.
double discrete_mutual_information(std::span<const int> a, std::span<const int> b);
/// MI between continuous `x` (binned into `bins_x` equal-width bins) and discrete `y`.
double discrete_mi(std::span<const double> x, std::span<const int> y, int bins_x = 20);

/// Average-rank fractional ranks.
std::vector<double> fractional_ranks(std::span<const double> values);
/// Spearman rank correlation; nullopt when either side has zero rank variance.
std::optional<double> spearman(std::span<const double> a, std::span<const double> b);

struct OlsResult {
  double r2 = 0.0;
  bool rank_deficient = false;
  std::size_t dummy_columns = 0;
};

/// R^2 of OLS on a one-hot encoding (plus intercept) of a categorical predictor.
OlsResult ols_variance_explained(std::span<const double> scores, const std::vector<std::string>& levels);

/// Two-sample Kolmogorov-Smirnov statistic sup |F_a - F_b|.
double ks_statistic(std::span<const double> a, std::span<const double> b);

}  // namespace disent
