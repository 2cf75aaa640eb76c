#include <algorithm>
#include <cmath>
#include <numeric>
#include <string>
#include <vector>

#include "disent/errors.hpp"
#include "disent/rng.hpp"
#include "disent/stats.hpp"
#include "doctest.h"

using namespace disent;

namespace {

struct Data {
  Eigen::MatrixXd x;
  Labels y;
};

Data two_blobs(std::size_t n, Rng& rng) {
  Data d{Eigen::MatrixXd(static_cast<Eigen::Index>(n), 2), Labels(n)};
  for (std::size_t i = 0; i < n; ++i) {
    const int c = static_cast<int>(i % 2);
    d.y[i] = c;
    d.x(static_cast<Eigen::Index>(i), 0) = (c ? 3.0 : -3.0) + 0.5 * rng.normal();
    d.x(static_cast<Eigen::Index>(i), 1) = (c ? 3.0 : -3.0) + 0.5 * rng.normal();
  }
  return d;
}

Data labeled_noise(std::size_t n, std::size_t features, int classes, Rng& rng) {
  Data d{Eigen::MatrixXd(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(features)), Labels(n)};
  for (std::size_t i = 0; i < n; ++i) {
    d.y[i] = rng.uniform_int(classes);
    for (std::size_t j = 0; j < features; ++j) d.x(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rng.normal();
  }
  return d;
}

}  // namespace

TEST_CASE("logistic regression separates two blobs") {
  Rng rng(1);
  const auto train = two_blobs(200, rng);
  const auto test = two_blobs(200, rng);
  const auto model = fit_logistic_cv(train.x, train.y, 5, 10, 3);
  CHECK(model.accuracy(test.x, test.y) == 1.0);
  CHECK(!model.degenerate);
}

TEST_CASE("logistic regression on labels independent of the features is at chance") {
  Rng rng(2);
  auto train = labeled_noise(2000, 3, 2, rng);
  auto test = labeled_noise(2000, 3, 2, rng);
  const auto model = fit_logistic_cv(train.x, train.y, 5, 10, 4);
  CHECK(std::abs(model.accuracy(test.x, test.y) - 0.5) < 0.05);
}

TEST_CASE("duplicating a feature column is the single-column fit at half the inverse regularization") {
  // Splitting w over two copies halves the L2 penalty, so C on the copies
  // corresponds to 2C on the original column.
  Rng rng(3);
  Eigen::MatrixXd x(300, 1);
  Labels y(300);
  for (Eigen::Index i = 0; i < 300; ++i) {
    y[static_cast<std::size_t>(i)] = rng.uniform_int(3);
    x(i, 0) = y[static_cast<std::size_t>(i)] + rng.normal();
  }
  Eigen::MatrixXd dup(300, 2);
  dup << x, x;
  Eigen::MatrixXd probe(200, 1);
  for (Eigen::Index i = 0; i < 200; ++i) probe(i, 0) = -2.0 + 6.0 * static_cast<double>(i) / 199.0;
  Eigen::MatrixXd probe_dup(200, 2);
  probe_dup << probe, probe;
  for (double c : {0.01, 0.3, 5.0}) {
    const auto single = fit_logistic(x, y, 2.0 * c);
    const auto doubled = fit_logistic(dup, y, c);
    CHECK((single.decision_scores(probe) - doubled.decision_scores(probe_dup)).cwiseAbs().maxCoeff() < 1e-8);
    CHECK(single.predict(probe) == doubled.predict(probe_dup));
  }
}

TEST_CASE("duplicating a feature column leaves cross-validated predictions unchanged") {
  Rng rng(4);
  Eigen::MatrixXd x(600, 1);
  Labels y(600);
  for (Eigen::Index i = 0; i < 600; ++i) {
    y[static_cast<std::size_t>(i)] = rng.uniform_int(3);
    x(i, 0) = 3.0 * y[static_cast<std::size_t>(i)] + 0.5 * rng.normal();
  }
  const Labels y_train(y.begin(), y.begin() + 300);
  const Eigen::MatrixXd train = x.topRows(300), held_out = x.bottomRows(300);
  Eigen::MatrixXd train_dup(300, 2), held_out_dup(300, 2);
  train_dup << train, train;
  held_out_dup << held_out, held_out;
  const auto single = fit_logistic_cv(train, y_train, 5, 10, 9);
  const auto doubled = fit_logistic_cv(train_dup, y_train, 5, 10, 9);
  CHECK(single.predict(held_out) == doubled.predict(held_out_dup));
}

TEST_CASE("logistic cv is deterministic given the seed") {
  Rng rng(4);
  const auto d = labeled_noise(300, 4, 3, rng);
  const auto a = fit_logistic_cv(d.x, d.y, 5, 10, 17);
  const auto b = fit_logistic_cv(d.x, d.y, 5, 10, 17);
  CHECK(a.inverse_regularization == b.inverse_regularization);
  CHECK(a.weights == b.weights);
  CHECK(a.bias == b.bias);
}

TEST_CASE("regularization grid spans 1e-4 to 1e4 in ten log steps") {
  const auto grid = regularization_grid();
  REQUIRE(grid.size() == 10);
  CHECK(grid.front() == doctest::Approx(1e-4));
  CHECK(grid.back() == doctest::Approx(1e4));
  for (std::size_t i = 1; i < grid.size(); ++i) CHECK(grid[i] / grid[i - 1] == doctest::Approx(std::pow(1e8, 1.0 / 9.0)));
}

TEST_CASE("single-class labels give a flagged degenerate classifier") {
  Eigen::MatrixXd x = Eigen::MatrixXd::Random(20, 2);
  const Labels y(20, 2);
  const auto logistic = fit_logistic_cv(x, y);
  CHECK(logistic.degenerate);
  CHECK(logistic.predict(x) == y);
  const auto linear = fit_linear_low_reg(x.col(0), y);
  CHECK(linear.degenerate);
  const auto trees = fit_tree_ensemble(x, y);
  CHECK(trees.degenerate);
  CHECK(trees.predict(x) == y);
}

TEST_CASE("low-regularization linear classifier learns thresholds on the class index") {
  Eigen::MatrixXd x(400, 1);
  Labels y(400);
  for (Eigen::Index i = 0; i < 400; ++i) {
    y[static_cast<std::size_t>(i)] = static_cast<int>(i % 4);
    x(i, 0) = static_cast<double>(i % 4);
  }
  CHECK(fit_linear_low_reg(x, y).accuracy(x, y) >= 0.9);
}

TEST_CASE("low-regularization linear classifier on an unrelated feature is at chance") {
  Rng rng(5);
  const auto train = labeled_noise(2000, 1, 4, rng);
  const auto test = labeled_noise(2000, 1, 4, rng);
  CHECK(std::abs(fit_linear_low_reg(train.x, train.y).accuracy(test.x, test.y) - 0.25) < 0.05);
}

TEST_CASE("rescaling features keeps the ranking of single-feature accuracies") {
  Rng rng(6);
  const std::size_t n = 1000;
  Eigen::MatrixXd x(n, 3);
  Labels y(n);
  for (std::size_t i = 0; i < n; ++i) {
    y[i] = rng.uniform_int(3);
    const auto r = static_cast<Eigen::Index>(i);
    x(r, 0) = y[i] + 0.2 * rng.normal();
    x(r, 1) = y[i] + 1.0 * rng.normal();
    x(r, 2) = rng.normal();
  }
  auto ranking = [&](double factor) {
    std::vector<double> acc;
    for (Eigen::Index j = 0; j < 3; ++j) {
      const Eigen::MatrixXd col = x.col(j) * factor;
      acc.push_back(fit_linear_low_reg(col, y).accuracy(col, y));
    }
    std::vector<int> order{0, 1, 2};
    std::sort(order.begin(), order.end(), [&](int a, int b) { return acc[static_cast<std::size_t>(a)] > acc[static_cast<std::size_t>(b)]; });
    return order;
  };
  CHECK(ranking(1.0) == ranking(10.0));
}

TEST_CASE("low-regularization classifier needs exactly one feature") {
  CHECK_THROWS_AS(fit_linear_low_reg(Eigen::MatrixXd::Zero(10, 2), Labels(10, 0)), InputError);
}

TEST_CASE("boosted trees put their importance on the thresholded feature") {
  Rng rng(7);
  const auto train = labeled_noise(1000, 5, 2, rng);
  Labels y(1000);
  for (Eigen::Index i = 0; i < 1000; ++i) y[static_cast<std::size_t>(i)] = train.x(i, 3) > 0.2 ? 1 : 0;
  const auto model = fit_tree_ensemble(train.x, y);
  CHECK(model.importances(3) > 0.9);
  CHECK(model.importances.sum() == doctest::Approx(1.0));
  CHECK(model.importances.minCoeff() >= 0.0);
  CHECK(model.accuracy(train.x, y) > 0.95);
}

TEST_CASE("boosted trees on unrelated labels are at chance") {
  Rng rng(8);
  const auto train = labeled_noise(2000, 3, 2, rng);
  const auto test = labeled_noise(2000, 3, 2, rng);
  CHECK(std::abs(fit_tree_ensemble(train.x, train.y).accuracy(test.x, test.y) - 0.5) < 0.05);
}

TEST_CASE("permuting feature columns permutes tree importances") {
  Rng rng(9);
  const auto d = labeled_noise(500, 4, 3, rng);
  Labels y(500);
  for (Eigen::Index i = 0; i < 500; ++i)
    y[static_cast<std::size_t>(i)] = (d.x(i, 1) > 0 ? 1 : 0) + (d.x(i, 2) > 0.5 ? 1 : 0);
  const std::vector<Eigen::Index> perm{2, 0, 3, 1};
  Eigen::MatrixXd xp(500, 4);
  for (Eigen::Index j = 0; j < 4; ++j) xp.col(j) = d.x.col(perm[static_cast<std::size_t>(j)]);
  const auto a = fit_tree_ensemble(d.x, y);
  const auto b = fit_tree_ensemble(xp, y);
  for (Eigen::Index j = 0; j < 4; ++j) CHECK(b.importances(j) == doctest::Approx(a.importances(perm[static_cast<std::size_t>(j)])).epsilon(1e-12));
}

TEST_CASE("tree ensemble fits are deterministic") {
  Rng rng(10);
  const auto d = labeled_noise(300, 3, 3, rng);
  const auto a = fit_tree_ensemble(d.x, d.y, {}, 1);
  const auto b = fit_tree_ensemble(d.x, d.y, {}, 1);
  CHECK(a.importances == b.importances);
  CHECK(a.decision_scores(d.x) == b.decision_scores(d.x));
}

TEST_CASE("discrete MI of independent columns is near zero") {
  Rng rng(11);
  std::vector<double> x(10000);
  std::vector<int> y(10000);
  for (std::size_t i = 0; i < x.size(); ++i) {
    x[i] = rng.uniform();
    y[i] = rng.uniform_int(4);
  }
  const double mi = discrete_mi(x, y, 20);
  CHECK(mi >= 0.0);
  CHECK(mi < 0.02);
}

TEST_CASE("discrete MI with its own four equiprobable bins is ln 4") {
  Rng rng(12);
  std::vector<double> x(10000);
  for (auto& v : x) v = rng.uniform();
  const auto y = bin_values(x, 4);
  CHECK(std::abs(discrete_mi(x, y, 4) - std::log(4.0)) < 0.01);
}

TEST_CASE("self-information equals the entropy of the binned values") {
  Rng rng(13);
  std::vector<double> x(3000);
  for (auto& v : x) v = rng.normal();
  const auto b = bin_values(x, 10);
  CHECK(discrete_mutual_information(b, b) == doctest::Approx(discrete_entropy(b)).epsilon(1e-12));
  CHECK(discrete_mi(x, b, 10) == doctest::Approx(discrete_entropy(b)).epsilon(1e-12));
}

TEST_CASE("MI is bounded by both entropies") {
  Rng rng(14);
  std::vector<int> a(2000), b(2000);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.uniform_int(6);
    b[i] = (a[i] + rng.uniform_int(2)) % 3;
  }
  const double mi = discrete_mutual_information(a, b);
  CHECK(mi <= std::min(discrete_entropy(a), discrete_entropy(b)) + 1e-12);
}

TEST_CASE("equal-width binning maps a constant column to one bin") {
  const std::vector<double> c(10, 3.5);
  for (int v : bin_values(c, 20)) CHECK(v == 0);
  const std::vector<double> x{0.0, 0.49, 0.51, 1.0};
  CHECK(bin_values(x, 2) == std::vector<int>{0, 0, 1, 1});
}

TEST_CASE("spearman hand examples") {
  const std::vector<double> a{1, 2, 3}, b{3, 2, 1};
  CHECK(*spearman(a, b) == doctest::Approx(-1.0));
  const std::vector<double> c{1, 2, 3, 4}, d{1, 3, 2, 4};
  CHECK(*spearman(c, d) == doctest::Approx(0.8));
  const std::vector<double> flat{2, 2, 2};
  CHECK(!spearman(a, flat).has_value());
}

TEST_CASE("fractional ranks average ties") {
  const std::vector<double> v{10, 20, 20, 5};
  CHECK(fractional_ranks(v) == std::vector<double>{2.0, 3.5, 3.5, 1.0});
}

TEST_CASE("spearman is invariant under strictly monotone transforms") {
  Rng rng(15);
  std::vector<double> a(200), b(200);
  for (std::size_t i = 0; i < a.size(); ++i) {
    a[i] = rng.normal();
    b[i] = a[i] + rng.normal();
  }
  std::vector<double> ta(a.size()), tb(b.size());
  std::transform(a.begin(), a.end(), ta.begin(), [](double v) { return std::exp(3.0 * v); });
  std::transform(b.begin(), b.end(), tb.begin(), [](double v) { return v * v * v + 2.0; });
  CHECK(*spearman(ta, tb) == doctest::Approx(*spearman(a, b)).epsilon(1e-12));
  CHECK(*spearman(a, ta) == doctest::Approx(1.0));
}

TEST_CASE("OLS R2 is one when scores are constant within levels") {
  std::vector<double> y;
  std::vector<std::string> levels;
  for (int i = 0; i < 60; ++i) {
    levels.push_back("l" + std::to_string(i % 6));
    y.push_back(static_cast<double>((i % 6) * (i % 6)));
  }
  const auto r = ols_variance_explained(y, levels);
  CHECK(r.r2 == doctest::Approx(1.0));
  CHECK(r.dummy_columns == 5);
}

TEST_CASE("OLS R2 is near zero when scores ignore the level") {
  Rng rng(16);
  std::vector<double> y(3000);
  std::vector<std::string> levels(3000);
  for (std::size_t i = 0; i < y.size(); ++i) {
    y[i] = rng.normal();
    levels[i] = "l" + std::to_string(rng.uniform_int(6));
  }
  const auto r = ols_variance_explained(y, levels);
  CHECK(r.r2 >= 0.0);
  CHECK(r.r2 <= 0.02);
}

TEST_CASE("nested OLS designs explain at least as much variance") {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    Rng rng(seed);
    std::vector<double> y(180);
    std::vector<std::string> coarse(180), fine(180);
    for (std::size_t i = 0; i < y.size(); ++i) {
      const int m = rng.uniform_int(6), v = rng.uniform_int(6);
      coarse[i] = std::to_string(m);
      fine[i] = std::to_string(m) + "|" + std::to_string(v);
      y[i] = 0.3 * m + 0.1 * v * rng.uniform() + rng.normal();
    }
    CHECK(ols_variance_explained(y, fine).r2 >= ols_variance_explained(y, coarse).r2 - 1e-12);
  }
}

TEST_CASE("OLS preconditions") {
  const std::vector<double> y{1, 2, 3};
  CHECK_THROWS_AS(ols_variance_explained(y, {"a", "a", "a"}), InputError);
  CHECK_THROWS_AS(ols_variance_explained(y, {"a", "b", "c"}), InputError);
}

TEST_CASE("KS statistic hand cases") {
  const std::vector<double> a{0.1, 0.4, 0.7}, b{2.0, 3.0};
  CHECK(ks_statistic(a, a) == 0.0);
  CHECK(ks_statistic(a, b) == 1.0);
  Rng rng(17);
  std::vector<double> u(10000), w(10000);
  for (std::size_t i = 0; i < u.size(); ++i) {
    u[i] = rng.uniform();
    w[i] = 0.5 + rng.uniform();
  }
  CHECK(std::abs(ks_statistic(u, w) - 0.5) < 0.02);
}
