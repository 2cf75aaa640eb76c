#pragma once

// Executable form of the non-identifiability construction: for a factorized
// prior p(z), f(z) = g^-1(h^-1(A h(g(z)))) with g the marginal CDFs, h the
// standard-normal quantile and A a dense Householder reflection is a
// bijection that leaves the law of z unchanged while every output coordinate
// depends on every input coordinate.

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "disent/rng.hpp"

namespace disent {

enum class Marginal { kUniform, kStandardNormal };

/// CDF, quantile and sampler for one of the supported marginals.
struct MarginalLaw {
  Marginal kind = Marginal::kUniform;

  double cdf(double x) const;
  double quantile(double p) const;
  bool in_support(double x) const;
  double sample(Rng& rng) const;
  /// Distance from x to the edge of the support (infinite for the normal).
  double boundary_distance(double x) const;
};

enum class Direction { kForward, kInverse };

/// CDF values are clamped to [kCdfClamp, 1 - kCdfClamp] before the normal quantile.
inline constexpr double kCdfClamp = 1e-12;

class HouseholderEntangler {
 public:
  /// v_1 = sqrt(alpha), v_i = sqrt((1-alpha)/(d-1)), A = I - 2 v v^T.
  /// `marginals` has one entry per dimension, or a single entry shared by all.
  static HouseholderEntangler build(std::size_t d, double alpha, std::vector<Marginal> marginals);

  /// Uses an arbitrary mixing matrix in place of the reflection, with no
  /// orthogonality check. Only for negative controls.
  static HouseholderEntangler with_matrix(Eigen::MatrixXd mixing, std::vector<Marginal> marginals);

  std::size_t dimension() const { return static_cast<std::size_t>(mixing_.rows()); }
  double alpha() const { return alpha_; }
  const Eigen::VectorXd& reflection_vector() const { return v_; }
  const Eigen::MatrixXd& matrix() const { return mixing_; }
  const std::vector<MarginalLaw>& marginals() const { return marginals_; }

  Eigen::VectorXd apply(const Eigen::VectorXd& z, Direction direction = Direction::kForward) const;
  /// Row-wise apply over an (n x d) sample matrix.
  Eigen::MatrixXd apply_rows(const Eigen::MatrixXd& z, Direction direction = Direction::kForward) const;

  /// Central-difference Jacobian J_ij = d f_i / d z_j.
  Eigen::MatrixXd empirical_jacobian(const Eigen::VectorXd& z, double step) const;

  /// n i.i.d. draws from the product of the marginals.
  Eigen::MatrixXd sample_prior(std::size_t n, Rng& rng) const;

 private:
  HouseholderEntangler(Eigen::MatrixXd mixing, Eigen::MatrixXd inverse, Eigen::VectorXd v, double alpha,
                       std::vector<MarginalLaw> marginals);

  Eigen::MatrixXd mixing_;
  Eigen::MatrixXd inverse_;
  Eigen::VectorXd v_;
  double alpha_ = 0.0;
  std::vector<MarginalLaw> marginals_;
};

struct InvarianceReport {
  std::size_t samples = 0;
  std::vector<double> ks;  // one per dimension
  double threshold = 0.0;
  bool passed = false;
};

/// Two-sample KS statistic per dimension between {z} and {f(z)} for n prior
/// draws. The threshold is the asymptotic two-sample critical value at
/// `significance` unless `threshold_override` is positive.
InvarianceReport marginal_invariance_report(const HouseholderEntangler& f, std::size_t n, Rng& rng,
                                            double significance = 0.001, double threshold_override = 0.0);

/// Asymptotic two-sample KS critical value c(a) * sqrt((n+m)/(n m)).
double ks_critical_value(std::size_t n, std::size_t m, double significance);

struct EnergyTestResult {
  double statistic = 0.0;  // n m / (n + m) * energy distance
  double p_value = 1.0;
  std::size_t permutations = 0;
};

/// Multivariate two-sample energy-distance test with a permutation null.
EnergyTestResult energy_distance_test(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, std::size_t permutations,
                                      Rng& rng);

}  // namespace disent
