#include <algorithm>
#include <cmath>
#include <numbers>
#include <vector>

#include "disent/errors.hpp"
#include "disent/factor_models.hpp"
#include "disent/impossibility.hpp"
#include "disent/metrics.hpp"
#include "doctest.h"

using namespace disent;

namespace {

const GroundTruthModel& sprites() {
  static const GroundTruthModel m = GroundTruthModel::micro_sprites();
  return m;
}

// mean_k (1 - 1/card_k): SAP of the identity when each factor is read perfectly
// by its own dimension and at chance by every other.
double identity_sap_oracle() {
  const std::vector<int> cards{3, 4, 8, 8, 8};
  double s = 0.0;
  for (int c : cards) s += 1.0 - 1.0 / c;
  return s / static_cast<double>(cards.size());
}

SampleMetricConfig small_sample() {
  SampleMetricConfig c;
  c.n = 3000;
  c.n_train = 3000;
  c.n_test = 1500;
  return c;
}

Eigen::MatrixXd correlated_gaussian(std::size_t n, double rho, Rng& rng) {
  Eigen::MatrixXd x(static_cast<Eigen::Index>(n), 2);
  const double s = std::sqrt(1.0 - rho * rho);
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    const double a = rng.normal(), b = rng.normal();
    x(i, 0) = a;
    x(i, 1) = rho * a + s * b;
  }
  return x;
}

}  // namespace

TEST_CASE("identity representation scores near one on every metric") {
  const IdentityRepresentation id;
  Rng rng(1);
  BetaVaeMetricConfig bv;
  bv.n_train = 500;
  bv.n_test = 250;
  CHECK(beta_vae_metric(sprites(), id, rng, bv).score >= 0.95);
  FactorVaeMetricConfig fv;
  fv.n_train = 500;
  fv.n_test = 250;
  fv.n_variance = 3000;
  CHECK(factor_vae_metric(sprites(), id, rng, fv).score >= 0.95);
  CHECK(mig(sprites(), id, rng, small_sample()).score >= 0.9);
  CHECK(modularity(sprites(), id, rng, small_sample()).score >= 0.99);
  CHECK(dci_disentanglement(sprites(), id, rng, small_sample()).score >= 0.95);
  CHECK(std::abs(sap(sprites(), id, rng, small_sample()).score - identity_sap_oracle()) < 0.05);
}

TEST_CASE("constant representation scores near zero or chance") {
  const ConstantRepresentation c(5, 0.3);
  Rng rng(2);
  CHECK(mig(sprites(), c, rng, small_sample()).score <= 0.05);
  const auto dci = dci_disentanglement(sprites(), c, rng, small_sample());
  CHECK(dci.score <= 0.05);
  CHECK(dci.has_flag("all_importances_zero"));
  CHECK(sap(sprites(), c, rng, small_sample()).score <= 0.05);
  BetaVaeMetricConfig bv;
  bv.n_train = 500;
  bv.n_test = 500;
  CHECK(std::abs(beta_vae_metric(sprites(), c, rng, bv).score - 0.2) < 0.1);
  FactorVaeMetricConfig fv;
  fv.n_train = 500;
  fv.n_test = 500;
  fv.n_variance = 2000;
  CHECK_THROWS_AS(factor_vae_metric(sprites(), c, rng, fv), InputError);
  fv.collapse = CollapsePolicy::kChance;
  CHECK(std::abs(factor_vae_metric(sprites(), c, rng, fv).score - 0.2) < 0.1);
}

TEST_CASE("noise representation carries no factor information") {
  const NoiseRepresentation noise(5);
  Rng rng(3);
  CHECK(mig(sprites(), noise, rng, small_sample()).score < 0.05);
  CHECK(dci_disentanglement(sprites(), noise, rng, small_sample()).score < 0.3);
}

TEST_CASE("entangling the factors lowers MIG and DCI") {
  const auto scores = normal_score_representation(sprites().factor_space());
  const auto entangled = entangled_representation(
      sprites().factor_space(), HouseholderEntangler::build(5, 0.25, {Marginal::kStandardNormal}));
  Rng rng(4);
  const double mig_clean = mig(sprites(), *scores, rng, small_sample()).score;
  const double mig_mixed = mig(sprites(), *entangled, rng, small_sample()).score;
  const double dci_clean = dci_disentanglement(sprites(), *scores, rng, small_sample()).score;
  const double dci_mixed = dci_disentanglement(sprites(), *entangled, rng, small_sample()).score;
  CHECK(mig_clean - mig_mixed >= 0.2);
  CHECK(dci_clean - dci_mixed >= 0.2);
}

TEST_CASE("modularity and DCI of hand-built matrices") {
  Eigen::MatrixXd diag = Eigen::MatrixXd::Zero(3, 3);
  diag.diagonal() << 1.0, 0.5, 2.0;
  CHECK(std::abs(modularity_from_mi(diag).score - 1.0) < 1e-12);
  CHECK(std::abs(dci_from_importance(diag).score - 1.0) < 1e-12);
  // Every code dimension spreads evenly over every factor.
  const Eigen::MatrixXd flat = Eigen::MatrixXd::Constant(3, 3, 0.4);
  CHECK(std::abs(dci_from_importance(flat).score) < 1e-12);
  CHECK(dci_from_importance(Eigen::MatrixXd::Zero(2, 2)).has_flag("all_importances_zero"));
}

TEST_CASE("mutual information of a duplicated 4-level column is ln 4") {
  Rng rng(5);
  Eigen::MatrixXi f(4000, 1);
  Eigen::MatrixXd r(4000, 1);
  for (Eigen::Index i = 0; i < 4000; ++i) {
    f(i, 0) = i % 4;
    r(i, 0) = f(i, 0);
  }
  const auto mi = mutual_information_matrix(r, f, 20);
  CHECK(std::abs(mi(0, 0) - std::log(4.0)) < 0.01);
}

TEST_CASE("gaussian total correlation at rho 0.5 matches the closed form") {
  Rng rng(6);
  const double expect = -0.5 * std::log(1.0 - 0.25);
  CHECK(std::abs(expect - 0.14384) < 1e-5);
  const auto tc = gaussian_total_correlation(correlated_gaussian(10000, 0.5, rng));
  CHECK(std::abs(tc.value - expect) < 0.01);
  CHECK(!tc.jittered);
  CHECK(std::abs(gaussian_total_correlation(correlated_gaussian(10000, 0.0, rng)).value) < 0.01);
}

TEST_CASE("singular covariance is jittered and flagged") {
  Eigen::MatrixXd x(100, 2);
  Rng rng(7);
  for (Eigen::Index i = 0; i < 100; ++i) x(i, 0) = x(i, 1) = rng.normal();
  const auto tc = gaussian_total_correlation(x);
  CHECK(tc.jittered);
  CHECK(tc.value > 1.0);
}

TEST_CASE("pairwise mi is small for independent and large for dependent columns") {
  Rng rng(8);
  CHECK(average_pairwise_mi(correlated_gaussian(5000, 0.0, rng)) < 0.05);
  CHECK(average_pairwise_mi(correlated_gaussian(5000, 0.95, rng)) > 0.5);
}

TEST_CASE("statistical efficiency is the accuracy ratio") {
  CHECK(statistical_efficiency(0.4, 0.8) == 0.5);
  CHECK(statistical_efficiency(0.9, 0.9) == 1.0);
}

TEST_CASE("downstream accuracy on the identity grows with training size") {
  const IdentityRepresentation id;
  Rng rng(9);
  DownstreamConfig cfg;
  cfg.train_sizes = {10, 100, 1000};
  cfg.n_test = 1000;
  const auto r = downstream_eval(sprites(), id, rng, cfg);
  CHECK(r.accuracy.at(1000) > 0.9);
  CHECK(r.accuracy.at(10) < r.accuracy.at(1000));
  CHECK(r.efficiency_small == 100);
  CHECK(r.efficiency_large == 1000);
  CHECK(r.efficiency == doctest::Approx(r.accuracy.at(100) / r.accuracy.at(1000)));
  REQUIRE(r.per_factor.at(1000).size() == 5);
}

TEST_CASE("DCI on the identity is stable across tree settings") {
  const IdentityRepresentation id;
  Rng a(10), b(10);
  SampleMetricConfig shallow = small_sample();
  SampleMetricConfig deep = small_sample();
  deep.trees = {20, 3, 0.1};
  const double s1 = dci_disentanglement(sprites(), id, a, shallow).score;
  const double s2 = dci_disentanglement(sprites(), id, b, deep).score;
  CHECK(std::abs(s1 - s2) < 0.05);
}

TEST_CASE("each metric's result is independent of the other metrics requested") {
  const IdentityRepresentation id;
  MetricSettings s = MetricSettings::desk();
  s.sample = small_sample();
  s.downstream.clear();
  const auto all = evaluate_metrics(sprites(), id, 77, s, {"mig", "sap", "modularity"});
  const auto one = evaluate_metrics(sprites(), id, 77, s, {"sap"});
  CHECK(all.scores.at("sap") == one.scores.at("sap"));
  CHECK(all.scores.size() == 3);
  CHECK_THROWS_AS(evaluate_metrics(sprites(), id, 77, s, {"nope"}), ConfigError);
}

TEST_CASE("collapsed FactorVAE metric becomes a null score with a reason") {
  const ConstantRepresentation c(4);
  MetricSettings s = MetricSettings::desk();
  s.factor_vae.n_train = 200;
  s.factor_vae.n_test = 100;
  s.downstream.clear();
  const auto r = evaluate_metrics(sprites(), c, 1, s, {"factor_vae_score"});
  CHECK(!r.scores.at("factor_vae_score").has_value());
  CHECK(r.unavailable.at("factor_vae_score").find("collapsed") != std::string::npos);
}

TEST_CASE("table mode reports interventional metrics as unavailable") {
  Rng rng(11);
  const auto zs = sprites().sample_factors(900, rng);
  ExternalTable t;
  t.factors = to_matrix(zs);
  t.representations = t.factors.cast<double>();
  MetricSettings s = MetricSettings::desk();
  const auto r = evaluate_table(t, 3, s);
  CHECK(!r.scores.at("beta_vae_score").has_value());
  CHECK(!r.scores.at("factor_vae_score").has_value());
  CHECK(r.unavailable.at("beta_vae_score").find("unavailable") == 0);
  REQUIRE(r.scores.at("mig").has_value());
  CHECK(*r.scores.at("mig") > 0.8);
  CHECK(*r.scores.at("modularity") > 0.95);
  const auto& lr = r.downstream.at("logistic");
  CHECK(lr.accuracy.count(2500) == 0);
  CHECK(std::find(lr.flags.begin(), lr.flags.end(), "train_sizes_capped") != lr.flags.end());
}
