#include "disent/impossibility.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "disent/errors.hpp"
#include "disent/normal.hpp"
#include "disent/stats.hpp"

namespace disent {

double MarginalLaw::cdf(double x) const {
  if (kind == Marginal::kUniform) return std::clamp(x, 0.0, 1.0);
  return normal_cdf(x);
}

double MarginalLaw::quantile(double p) const {
  if (kind == Marginal::kUniform) return p;
  return normal_quantile(p);
}

bool MarginalLaw::in_support(double x) const {
  if (kind == Marginal::kUniform) return x >= 0.0 && x <= 1.0;
  return std::isfinite(x);
}

double MarginalLaw::sample(Rng& rng) const {
  return kind == Marginal::kUniform ? rng.uniform() : rng.normal();
}

double MarginalLaw::boundary_distance(double x) const {
  if (kind == Marginal::kUniform) return std::min(x, 1.0 - x);
  return std::numeric_limits<double>::infinity();
}

namespace {

std::vector<MarginalLaw> expand_marginals(std::size_t d, const std::vector<Marginal>& marginals) {
  if (marginals.size() != 1 && marginals.size() != d)
    throw InputError("need one marginal per dimension or a single shared marginal");
  std::vector<MarginalLaw> laws;
  for (std::size_t i = 0; i < d; ++i) laws.push_back({marginals.size() == 1 ? marginals[0] : marginals[i]});
  return laws;
}

}  // namespace

HouseholderEntangler::HouseholderEntangler(Eigen::MatrixXd mixing, Eigen::MatrixXd inverse, Eigen::VectorXd v,
                                           double alpha, std::vector<MarginalLaw> marginals)
    : mixing_(std::move(mixing)), inverse_(std::move(inverse)), v_(std::move(v)), alpha_(alpha),
      marginals_(std::move(marginals)) {}

HouseholderEntangler HouseholderEntangler::build(std::size_t d, double alpha, std::vector<Marginal> marginals) {
  if (d < 2) throw InputError("entangler dimension must be at least 2");
  if (!(alpha > 0.0 && alpha < 0.5))
    throw InputError("alpha must lie in (0, 0.5) so that no v_i equals 0 or sqrt(1/2)");
  const auto n = static_cast<Eigen::Index>(d);
  Eigen::VectorXd v(n);
  v(0) = std::sqrt(alpha);
  for (Eigen::Index i = 1; i < n; ++i) v(i) = std::sqrt((1.0 - alpha) / static_cast<double>(d - 1));
  Eigen::MatrixXd a = Eigen::MatrixXd::Identity(n, n) - 2.0 * v * v.transpose();
  // A is a symmetric reflection, so it is its own inverse.
  Eigen::MatrixXd inv = a.transpose();
  return HouseholderEntangler(std::move(a), std::move(inv), std::move(v), alpha, expand_marginals(d, marginals));
}

HouseholderEntangler HouseholderEntangler::with_matrix(Eigen::MatrixXd mixing, std::vector<Marginal> marginals) {
  if (mixing.rows() != mixing.cols() || mixing.rows() < 2) throw InputError("mixing matrix must be square, d >= 2");
  Eigen::MatrixXd inv = mixing.inverse();
  const auto d = static_cast<std::size_t>(mixing.rows());
  return HouseholderEntangler(std::move(mixing), std::move(inv), Eigen::VectorXd(), 0.0,
                              expand_marginals(d, marginals));
}

Eigen::VectorXd HouseholderEntangler::apply(const Eigen::VectorXd& z, Direction direction) const {
  const auto d = mixing_.rows();
  if (z.size() != d) throw InputError("input dimension does not match the entangler");
  Eigen::VectorXd h(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    const auto& law = marginals_[static_cast<std::size_t>(i)];
    if (!law.in_support(z(i))) throw InputError("input coordinate " + std::to_string(i) + " outside the support");
    const double u = std::clamp(law.cdf(z(i)), kCdfClamp, 1.0 - kCdfClamp);
    h(i) = normal_quantile(u);
  }
  const Eigen::VectorXd y = (direction == Direction::kForward ? mixing_ : inverse_) * h;
  Eigen::VectorXd out(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    out(i) = marginals_[static_cast<std::size_t>(i)].quantile(normal_cdf(y(i)));
  }
  return out;
}

Eigen::MatrixXd HouseholderEntangler::apply_rows(const Eigen::MatrixXd& z, Direction direction) const {
  Eigen::MatrixXd out(z.rows(), z.cols());
  for (Eigen::Index r = 0; r < z.rows(); ++r) out.row(r) = apply(z.row(r).transpose(), direction).transpose();
  return out;
}

Eigen::MatrixXd HouseholderEntangler::empirical_jacobian(const Eigen::VectorXd& z, double step) const {
  if (!(step > 0.0)) throw InputError("finite-difference step must be positive");
  const auto d = mixing_.rows();
  if (z.size() != d) throw InputError("input dimension does not match the entangler");
  for (Eigen::Index j = 0; j < d; ++j)
    if (marginals_[static_cast<std::size_t>(j)].boundary_distance(z(j)) <= step)
      throw InputError("point within one step of the support boundary in coordinate " + std::to_string(j));
  Eigen::MatrixXd jac(d, d);
  for (Eigen::Index j = 0; j < d; ++j) {
    Eigen::VectorXd hi = z, lo = z;
    hi(j) += step;
    lo(j) -= step;
    jac.col(j) = (apply(hi) - apply(lo)) / (2.0 * step);
  }
  return jac;
}

Eigen::MatrixXd HouseholderEntangler::sample_prior(std::size_t n, Rng& rng) const {
  const auto d = mixing_.rows();
  Eigen::MatrixXd z(static_cast<Eigen::Index>(n), d);
  for (Eigen::Index r = 0; r < z.rows(); ++r)
    for (Eigen::Index c = 0; c < d; ++c) z(r, c) = marginals_[static_cast<std::size_t>(c)].sample(rng);
  return z;
}

double ks_critical_value(std::size_t n, std::size_t m, double significance) {
  if (!(significance > 0.0 && significance < 1.0)) throw InputError("significance must lie in (0, 1)");
  const double c = std::sqrt(-std::log(significance / 2.0) / 2.0);
  const double nn = static_cast<double>(n), mm = static_cast<double>(m);
  return c * std::sqrt((nn + mm) / (nn * mm));
}

InvarianceReport marginal_invariance_report(const HouseholderEntangler& f, std::size_t n, Rng& rng,
                                            double significance, double threshold_override) {
  if (n < 1000) throw InputError("marginal invariance report needs n >= 1000");
  const Eigen::MatrixXd z = f.sample_prior(n, rng);
  const Eigen::MatrixXd fz = f.apply_rows(z);
  InvarianceReport report;
  report.samples = n;
  report.threshold = threshold_override > 0.0 ? threshold_override : ks_critical_value(n, n, significance);
  report.passed = true;
  for (Eigen::Index c = 0; c < z.cols(); ++c) {
    std::vector<double> a(z.col(c).data(), z.col(c).data() + n);
    std::vector<double> b(fz.col(c).data(), fz.col(c).data() + n);
    const double ks = ks_statistic(a, b);
    report.ks.push_back(ks);
    report.passed = report.passed && ks < report.threshold;
  }
  return report;
}

namespace {

struct GroupSums {
  double xx = 0.0, yy = 0.0, xy = 0.0;
};

GroupSums pairwise_sums(const Eigen::MatrixXd& pooled, const std::vector<char>& in_y) {
  GroupSums s;
  const Eigen::Index n = pooled.rows(), d = pooled.cols();
  for (Eigen::Index i = 0; i < n; ++i) {
    for (Eigen::Index j = i + 1; j < n; ++j) {
      double sq = 0.0;
      for (Eigen::Index k = 0; k < d; ++k) {
        const double diff = pooled(i, k) - pooled(j, k);
        sq += diff * diff;
      }
      const double dist = std::sqrt(sq);
      const int g = in_y[static_cast<std::size_t>(i)] + in_y[static_cast<std::size_t>(j)];
      if (g == 0) s.xx += dist;
      else if (g == 2) s.yy += dist;
      else s.xy += dist;
    }
  }
  return s;
}

double energy_statistic(const GroupSums& s, double n, double m) {
  const double e = 2.0 * s.xy / (n * m) - 2.0 * s.xx / (n * n) - 2.0 * s.yy / (m * m);
  return n * m / (n + m) * e;
}

}  // namespace

EnergyTestResult energy_distance_test(const Eigen::MatrixXd& x, const Eigen::MatrixXd& y, std::size_t permutations,
                                      Rng& rng) {
  if (x.cols() != y.cols() || x.rows() == 0 || y.rows() == 0) throw InputError("energy test needs matching samples");
  Eigen::MatrixXd pooled(x.rows() + y.rows(), x.cols());
  pooled << x, y;
  std::vector<char> labels(static_cast<std::size_t>(pooled.rows()), 0);
  std::fill(labels.begin() + x.rows(), labels.end(), 1);
  const double n = static_cast<double>(x.rows()), m = static_cast<double>(y.rows());
  EnergyTestResult r;
  r.statistic = energy_statistic(pairwise_sums(pooled, labels), n, m);
  r.permutations = permutations;
  std::size_t exceed = 0;
  for (std::size_t b = 0; b < permutations; ++b) {
    std::shuffle(labels.begin(), labels.end(), rng.engine());
    if (energy_statistic(pairwise_sums(pooled, labels), n, m) >= r.statistic) ++exceed;
  }
  r.p_value = static_cast<double>(exceed + 1) / static_cast<double>(permutations + 1);
  return r;
}

}  // namespace disent
