#include "disent/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "disent/errors.hpp"
#include "disent/normal.hpp"

namespace disent {

// --- representations ----------------------------------------------------------------

Eigen::MatrixXd IdentityRepresentation::apply(const std::vector<FactorVector>& factors,
                                              const std::vector<Observation>&, Rng&) const {
  return to_matrix(factors).cast<double>();
}

Eigen::MatrixXd ConstantRepresentation::apply(const std::vector<FactorVector>& factors,
                                              const std::vector<Observation>&, Rng&) const {
  return Eigen::MatrixXd::Constant(static_cast<Eigen::Index>(factors.size()), static_cast<Eigen::Index>(dim_), value_);
}

Eigen::MatrixXd NoiseRepresentation::apply(const std::vector<FactorVector>& factors, const std::vector<Observation>&,
                                           Rng& rng) const {
  Eigen::MatrixXd out(static_cast<Eigen::Index>(factors.size()), static_cast<Eigen::Index>(dim_));
  for (Eigen::Index i = 0; i < out.rows(); ++i)
    for (Eigen::Index j = 0; j < out.cols(); ++j) out(i, j) = rng.normal();
  return out;
}

Eigen::MatrixXd FactorFunctionRepresentation::apply(const std::vector<FactorVector>& factors,
                                                    const std::vector<Observation>&, Rng&) const {
  Eigen::MatrixXd out;
  for (std::size_t i = 0; i < factors.size(); ++i) {
    const Eigen::VectorXd r = fn_(factors[i]);
    if (i == 0) out.resize(static_cast<Eigen::Index>(factors.size()), r.size());
    out.row(static_cast<Eigen::Index>(i)) = r.transpose();
  }
  return out;
}

Eigen::MatrixXd VaeRepresentation::apply(const std::vector<FactorVector>&, const std::vector<Observation>& observations,
                                         Rng& rng) const {
  const std::size_t n = observations.size();
  const std::size_t d = model_->latent_dim();
  Eigen::MatrixXd out(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(d));
  constexpr std::size_t kChunk = 1024;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t end = std::min(n, start + kChunk);
    const std::vector<Observation> chunk(observations.begin() + static_cast<std::ptrdiff_t>(start),
                                         observations.begin() + static_cast<std::ptrdiff_t>(end));
    const Tensor r = representation(*model_, to_tensor(chunk), mode_, &rng);
    for (std::size_t i = 0; i < r.rows(); ++i)
      for (std::size_t j = 0; j < d; ++j) out(static_cast<Eigen::Index>(start + i), static_cast<Eigen::Index>(j)) = r(i, j);
  }
  return out;
}

Eigen::VectorXd normal_scores(const FactorVector& z, const FactorSpace& space) {
  Eigen::VectorXd out(static_cast<Eigen::Index>(z.values.size()));
  for (std::size_t k = 0; k < z.values.size(); ++k)
    out(static_cast<Eigen::Index>(k)) = normal_quantile((z.values[k] + 0.5) / space.cardinality(k));
  return out;
}

std::unique_ptr<RepresentationFunction> entangled_representation(const FactorSpace& space,
                                                                 HouseholderEntangler entangler) {
  if (entangler.dimension() != space.num_factors()) throw InputError("entangler dimension must equal K");
  return std::make_unique<FactorFunctionRepresentation>(
      [space, f = std::move(entangler)](const FactorVector& z) { return f.apply(normal_scores(z, space)); });
}

std::unique_ptr<RepresentationFunction> normal_score_representation(const FactorSpace& space) {
  return std::make_unique<FactorFunctionRepresentation>(
      [space](const FactorVector& z) { return normal_scores(z, space); });
}

Eigen::MatrixXd represent(const GroundTruthModel& model, const RepresentationFunction& rep,
                          const std::vector<FactorVector>& factors, Rng& rng) {
  if (!rep.uses_observations()) return rep.apply(factors, {}, rng);
  return rep.apply(factors, model.render_batch(factors, rng), rng);
}

bool MetricReport::has_flag(const std::string& f) const {
  return std::find(flags.begin(), flags.end(), f) != flags.end();
}

namespace {

Labels column_labels(const Eigen::MatrixXi& m, Eigen::Index k) {
  Labels y(static_cast<std::size_t>(m.rows()));
  for (Eigen::Index i = 0; i < m.rows(); ++i) y[static_cast<std::size_t>(i)] = m(i, k);
  return y;
}

std::vector<double> column_values(const Eigen::MatrixXd& m, Eigen::Index j) {
  return std::vector<double>(m.col(j).data(), m.col(j).data() + m.rows());
}

Eigen::RowVectorXd sample_variance(const Eigen::MatrixXd& m) {
  const Eigen::RowVectorXd mu = m.colwise().mean();
  const double denom = std::max<double>(1.0, static_cast<double>(m.rows()) - 1.0);
  return (m.rowwise() - mu).array().square().colwise().sum() / denom;
}

/// Descending top-two of a column, ties broken by lowest index.
std::pair<double, double> top_two(const Eigen::VectorXd& v) {
  double best = -std::numeric_limits<double>::infinity(), second = best;
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    if (v(i) > best) {
      second = best;
      best = v(i);
    } else if (v(i) > second) {
      second = v(i);
    }
  }
  return {best, second};
}

}  // namespace

// --- BetaVAE metric -----------------------------------------------------------------

MetricReport beta_vae_metric(const GroundTruthModel& model, const RepresentationFunction& rep, Rng& rng,
                             const BetaVaeMetricConfig& cfg) {
  if (cfg.n_train == 0 || cfg.n_test == 0 || cfg.batch == 0) throw InputError("BetaVAE metric needs positive sizes");
  const std::size_t k_count = model.factor_space().num_factors();
  auto make_points = [&](std::size_t n, Eigen::MatrixXd& x, Labels& y) {
    y.resize(n);
    for (std::size_t i = 0; i < n; ++i) {
      const int k = rng.uniform_int(static_cast<int>(k_count));
      auto z1 = model.sample_factors(cfg.batch, rng);
      auto z2 = model.sample_factors(cfg.batch, rng);
      for (std::size_t b = 0; b < cfg.batch; ++b) z2[b].values[static_cast<std::size_t>(k)] = z1[b].values[static_cast<std::size_t>(k)];
      const Eigen::MatrixXd r1 = represent(model, rep, z1, rng);
      const Eigen::MatrixXd r2 = represent(model, rep, z2, rng);
      if (i == 0) x.resize(static_cast<Eigen::Index>(n), r1.cols());
      x.row(static_cast<Eigen::Index>(i)) = (r1 - r2).cwiseAbs().colwise().mean();
      y[i] = k;
    }
  };
  Eigen::MatrixXd x_train, x_test;
  Labels y_train, y_test;
  make_points(cfg.n_train, x_train, y_train);
  make_points(cfg.n_test, x_test, y_test);
  const ClassifierModel clf =
      fit_logistic(x_train, y_train, cfg.inverse_regularization, static_cast<int>(k_count));
  MetricReport r;
  r.values["train_accuracy"] = clf.accuracy(x_train, y_train);
  r.values["eval_accuracy"] = clf.accuracy(x_test, y_test);
  r.score = r.values["eval_accuracy"];
  return r;
}

// --- FactorVAE metric ---------------------------------------------------------------

MetricReport factor_vae_metric(const GroundTruthModel& model, const RepresentationFunction& rep, Rng& rng,
                               const FactorVaeMetricConfig& cfg) {
  if (cfg.n_train == 0 || cfg.n_test == 0 || cfg.batch < 2 || cfg.n_variance < 2)
    throw InputError("FactorVAE metric needs positive sizes and batches of at least 2");
  const auto& space = model.factor_space();
  const std::size_t k_count = space.num_factors();
  const Eigen::RowVectorXd global_var =
      sample_variance(represent(model, rep, model.sample_factors(cfg.n_variance, rng), rng));
  const auto d = static_cast<std::size_t>(global_var.size());
  std::vector<Eigen::Index> active;
  for (Eigen::Index j = 0; j < global_var.size(); ++j)
    if (global_var(j) >= cfg.prune_variance) active.push_back(j);

  MetricReport r;
  const bool collapsed = active.empty();
  if (collapsed) {
    if (cfg.collapse == CollapsePolicy::kError) throw InputError("all dimensions collapsed");
    r.flags.push_back("all_dimensions_collapsed");
  }
  // Vote row d stands for "no surviving dimension".
  auto vote = [&](int& factor) -> std::size_t {
    factor = rng.uniform_int(static_cast<int>(k_count));
    const int value = rng.uniform_int(space.cardinality(static_cast<std::size_t>(factor)));
    const auto zs = model.sample_fixed_factor_values(cfg.batch, static_cast<std::size_t>(factor), value, rng);
    const Eigen::MatrixXd reps = represent(model, rep, zs, rng);
    if (collapsed) return d;
    const Eigen::RowVectorXd local = sample_variance(reps);
    std::size_t best = static_cast<std::size_t>(active[0]);
    double best_ratio = std::numeric_limits<double>::infinity();
    for (Eigen::Index j : active) {
      const double ratio = local(j) / global_var(j);
      if (ratio < best_ratio) {
        best_ratio = ratio;
        best = static_cast<std::size_t>(j);
      }
    }
    return best;
  };

  Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(d + 1), static_cast<Eigen::Index>(k_count));
  for (std::size_t i = 0; i < cfg.n_train; ++i) {
    int factor = 0;
    const std::size_t dim = vote(factor);
    counts(static_cast<Eigen::Index>(dim), factor) += 1.0;
  }
  std::vector<int> assignment(d + 1, 0);
  double train_correct = 0.0;
  for (std::size_t j = 0; j <= d; ++j) {
    Eigen::Index best = 0;
    counts.row(static_cast<Eigen::Index>(j)).maxCoeff(&best);
    assignment[j] = static_cast<int>(best);
    train_correct += counts(static_cast<Eigen::Index>(j), best);
  }
  if (collapsed) {
    Eigen::Index best = 0;
    counts.colwise().sum().maxCoeff(&best);
    assignment[d] = static_cast<int>(best);
  }
  double test_correct = 0.0;
  for (std::size_t i = 0; i < cfg.n_test; ++i) {
    int factor = 0;
    const std::size_t dim = vote(factor);
    if (assignment[dim] == factor) test_correct += 1.0;
  }
  r.values["train_accuracy"] = train_correct / static_cast<double>(cfg.n_train);
  r.values["eval_accuracy"] = test_correct / static_cast<double>(cfg.n_test);
  r.values["active_dimensions"] = static_cast<double>(active.size());
  r.matrices["votes"] = counts.topRows(static_cast<Eigen::Index>(d));
  r.matrices["global_variance"] = global_var;
  r.score = r.values["eval_accuracy"];
  return r;
}

// --- sample-based metrics -----------------------------------------------------------

Sample draw_sample(const GroundTruthModel& model, const RepresentationFunction& rep, std::size_t n, Rng& rng) {
  const auto zs = model.sample_factors(n, rng);
  return {to_matrix(zs), represent(model, rep, zs, rng)};
}

Eigen::MatrixXd mutual_information_matrix(const Eigen::MatrixXd& reps, const Eigen::MatrixXi& factors, int bins) {
  if (reps.rows() != factors.rows()) throw InputError("representation and factor rows differ");
  Eigen::MatrixXd mi(reps.cols(), factors.cols());
  std::vector<Labels> ys;
  for (Eigen::Index k = 0; k < factors.cols(); ++k) ys.push_back(column_labels(factors, k));
  for (Eigen::Index j = 0; j < reps.cols(); ++j) {
    const auto binned = bin_values(column_values(reps, j), bins);
    for (Eigen::Index k = 0; k < factors.cols(); ++k)
      mi(j, k) = discrete_mutual_information(binned, ys[static_cast<std::size_t>(k)]);
  }
  return mi;
}

MetricReport mig_from_sample(const Sample& s, const std::vector<double>& factor_entropies, int bins) {
  if (s.representations.cols() < 2) throw InputError("MIG needs at least 2 representation dimensions");
  if (factor_entropies.size() != static_cast<std::size_t>(s.factors.cols()))
    throw InputError("need one entropy per factor");
  const Eigen::MatrixXd mi = mutual_information_matrix(s.representations, s.factors, bins);
  MetricReport r;
  Eigen::VectorXd gaps(mi.cols());
  for (Eigen::Index k = 0; k < mi.cols(); ++k) {
    const double h = factor_entropies[static_cast<std::size_t>(k)];
    if (!(h > 0.0)) throw InputError("factor " + std::to_string(k) + " has zero entropy");
    const auto [best, second] = top_two(mi.col(k));
    gaps(k) = (best - second) / h;
  }
  r.score = gaps.mean();
  r.matrices["mutual_information"] = mi;
  r.matrices["normalized_gaps"] = gaps;
  r.matrices["factor_entropies"] =
      Eigen::Map<const Eigen::VectorXd>(factor_entropies.data(), static_cast<Eigen::Index>(factor_entropies.size()));
  return r;
}

MetricReport modularity_from_mi(const Eigen::MatrixXd& mi) {
  if (mi.cols() < 2) throw InputError("modularity needs at least 2 factors");
  MetricReport r;
  Eigen::VectorXd per_dim(mi.rows());
  const double n_minus_1 = static_cast<double>(mi.cols() - 1);
  std::size_t dead = 0;
  for (Eigen::Index i = 0; i < mi.rows(); ++i) {
    Eigen::Index arg = 0;
    const double theta = mi.row(i).maxCoeff(&arg);
    if (theta <= 0.0) {
      per_dim(i) = 1.0;
      ++dead;
      continue;
    }
    double dev = 0.0;
    for (Eigen::Index f = 0; f < mi.cols(); ++f) {
      const double t = f == arg ? theta : 0.0;
      dev += (mi(i, f) - t) * (mi(i, f) - t);
    }
    per_dim(i) = 1.0 - dev / (theta * theta * n_minus_1);
  }
  r.score = per_dim.mean();
  r.matrices["per_dimension"] = per_dim;
  r.values["dead_dimensions"] = static_cast<double>(dead);
  return r;
}

MetricReport modularity_from_sample(const Sample& s, int bins) {
  MetricReport r = modularity_from_mi(mutual_information_matrix(s.representations, s.factors, bins));
  r.matrices["mutual_information"] = mutual_information_matrix(s.representations, s.factors, bins);
  return r;
}

MetricReport dci_from_importance(const Eigen::MatrixXd& imp) {
  if ((imp.array() < 0.0).any()) throw InputError("importances must be non-negative");
  MetricReport r;
  const double total = imp.sum();
  const auto k = static_cast<double>(imp.rows());
  Eigen::VectorXd per_dim = Eigen::VectorXd::Zero(imp.cols());
  Eigen::VectorXd weights = Eigen::VectorXd::Zero(imp.cols());
  r.score = 0.0;
  if (!(total > 0.0)) {
    r.flags.push_back("all_importances_zero");
  } else {
    for (Eigen::Index j = 0; j < imp.cols(); ++j) {
      const double col = imp.col(j).sum();
      if (!(col > 0.0)) continue;
      double h = 0.0;
      for (Eigen::Index f = 0; f < imp.rows(); ++f) {
        const double p = imp(f, j) / col;
        if (p > 0.0) h -= p * std::log(p);
      }
      if (k > 1.0) h /= std::log(k);
      per_dim(j) = 1.0 - h;
      weights(j) = col / total;
      r.score += weights(j) * per_dim(j);
    }
  }
  r.matrices["importance"] = imp;
  r.matrices["per_dimension"] = per_dim;
  r.matrices["dimension_weights"] = weights;
  return r;
}

MetricReport dci_from_samples(const Sample& train, const Sample& test, const std::vector<int>& cardinalities,
                              TreeEnsembleConfig trees) {
  const auto k_count = train.factors.cols();
  if (static_cast<std::size_t>(k_count) != cardinalities.size()) throw InputError("need one cardinality per factor");
  Eigen::MatrixXd imp(k_count, train.representations.cols());
  double train_acc = 0.0, test_acc = 0.0;
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const Labels y = column_labels(train.factors, k);
    if (std::adjacent_find(y.begin(), y.end(), std::not_equal_to<>()) == y.end())
      throw InputError("factor " + std::to_string(k) + " has a constant target; its tree ensemble cannot be fit");
    const ClassifierModel m =
        fit_tree_ensemble(train.representations, y, trees, 0, cardinalities[static_cast<std::size_t>(k)]);
    imp.row(k) = m.importances.transpose();
    train_acc += m.accuracy(train.representations, y);
    test_acc += m.accuracy(test.representations, column_labels(test.factors, k));
  }
  MetricReport r = dci_from_importance(imp);
  r.values["informativeness_train"] = train_acc / static_cast<double>(k_count);
  r.values["informativeness_test"] = test_acc / static_cast<double>(k_count);
  return r;
}

MetricReport sap_from_samples(const Sample& train, const Sample& test, const std::vector<int>& cardinalities,
                              double strength) {
  const auto d = train.representations.cols();
  if (d < 2) throw InputError("SAP needs at least 2 representation dimensions");
  const auto k_count = train.factors.cols();
  Eigen::MatrixXd scores(d, k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const Labels y_train = column_labels(train.factors, k);
    const Labels y_test = column_labels(test.factors, k);
    for (Eigen::Index j = 0; j < d; ++j) {
      const ClassifierModel m = fit_linear_low_reg(train.representations.col(j), y_train, strength,
                                                   cardinalities[static_cast<std::size_t>(k)]);
      scores(j, k) = m.accuracy(test.representations.col(j), y_test);
    }
  }
  MetricReport r;
  Eigen::VectorXd gaps(k_count);
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const auto [best, second] = top_two(scores.col(k));
    gaps(k) = best - second;
  }
  r.score = gaps.mean();
  r.matrices["score_matrix"] = scores;
  r.matrices["gaps"] = gaps;
  return r;
}

namespace {

std::vector<double> exact_entropies(const FactorSpace& space) {
  std::vector<double> h;
  for (int c : space.cardinalities()) h.push_back(std::log(static_cast<double>(c)));
  return h;
}

std::vector<double> empirical_entropies(const Eigen::MatrixXi& factors) {
  std::vector<double> h;
  for (Eigen::Index k = 0; k < factors.cols(); ++k) h.push_back(discrete_entropy(column_labels(factors, k)));
  return h;
}

}  // namespace

MetricReport mig(const GroundTruthModel& model, const RepresentationFunction& rep, Rng& rng,
                 const SampleMetricConfig& cfg) {
  const Sample s = draw_sample(model, rep, cfg.n, rng);
  MetricReport r = mig_from_sample(
      s, cfg.empirical_entropy ? empirical_entropies(s.factors) : exact_entropies(model.factor_space()), cfg.bins);
  if (cfg.empirical_entropy) r.flags.push_back("empirical_entropy");
  return r;
}

MetricReport modularity(const GroundTruthModel& model, const RepresentationFunction& rep, Rng& rng,
                        const SampleMetricConfig& cfg) {
  return modularity_from_sample(draw_sample(model, rep, cfg.n, rng), cfg.bins);
}

MetricReport dci_disentanglement(const GroundTruthModel& model, const RepresentationFunction& rep, Rng& rng,
                                 const SampleMetricConfig& cfg) {
  const Sample train = draw_sample(model, rep, cfg.n_train, rng);
  const Sample test = draw_sample(model, rep, cfg.n_test, rng);
  return dci_from_samples(train, test, model.factor_space().cardinalities(), cfg.trees);
}

MetricReport sap(const GroundTruthModel& model, const RepresentationFunction& rep, Rng& rng,
                 const SampleMetricConfig& cfg) {
  const Sample train = draw_sample(model, rep, cfg.n_train, rng);
  const Sample test = draw_sample(model, rep, cfg.n_test, rng);
  return sap_from_samples(train, test, model.factor_space().cardinalities());
}

// --- diagnostics --------------------------------------------------------------------

GaussianTc gaussian_total_correlation(const Eigen::MatrixXd& points) {
  const auto n = points.rows();
  const auto d = points.cols();
  if (d < 1) throw InputError("need at least one dimension");
  if (n <= d) throw InputError("Gaussian total correlation needs more points than dimensions");
  GaussianTc out;
  if (d == 1) return out;
  const Eigen::MatrixXd centered = points.rowwise() - points.colwise().mean();
  Eigen::MatrixXd cov = centered.transpose() * centered / static_cast<double>(n - 1);

  // A pivot that loses 12 digits relative to its diagonal entry counts as singular.
  auto log_det = [&](const Eigen::MatrixXd& s, bool strict) -> std::optional<double> {
    Eigen::LLT<Eigen::MatrixXd> llt(s);
    if (llt.info() != Eigen::Success) return std::nullopt;
    double ld = 0.0;
    for (Eigen::Index i = 0; i < d; ++i) {
      const double l = llt.matrixL()(i, i);
      if (!(l > 0.0) || (strict && l * l < 1e-12 * s(i, i))) return std::nullopt;
      ld += 2.0 * std::log(l);
    }
    return ld;
  };
  std::optional<double> ld = log_det(cov, true);
  if (!ld) {
    cov.diagonal().array() += kCovarianceJitter;
    out.jittered = true;
    ld = log_det(cov, false);
    if (!ld) throw InputError("covariance is singular even after jitter");
  }
  double sum_log_diag = 0.0;
  for (Eigen::Index i = 0; i < d; ++i) sum_log_diag += std::log(cov(i, i));
  out.value = std::max(0.0, 0.5 * (sum_log_diag - *ld));
  return out;
}

double average_pairwise_mi(const Eigen::MatrixXd& points, int bins) {
  const auto d = points.cols();
  if (d < 2) throw InputError("pairwise MI needs at least 2 dimensions");
  std::vector<std::vector<int>> binned;
  for (Eigen::Index j = 0; j < d; ++j) binned.push_back(bin_values(column_values(points, j), bins));
  double total = 0.0;
  std::size_t pairs = 0;
  for (Eigen::Index a = 0; a < d; ++a)
    for (Eigen::Index b = a + 1; b < d; ++b) {
      total += discrete_mutual_information(binned[static_cast<std::size_t>(a)], binned[static_cast<std::size_t>(b)]);
      ++pairs;
    }
  return total / static_cast<double>(pairs);
}

std::string to_string(Learner l) { return l == Learner::kLogistic ? "logistic" : "tree"; }

Learner learner_from_string(const std::string& s) {
  if (s == "logistic") return Learner::kLogistic;
  if (s == "tree") return Learner::kTree;
  throw ConfigError("unknown learner '" + s + "'");
}

double statistical_efficiency(double acc_small, double acc_large) {
  if (!(acc_large > 0.0)) throw InputError("efficiency undefined for zero large-sample accuracy");
  return acc_small / acc_large;
}

DownstreamReport downstream_from_samples(const Sample& pool, const Sample& test, const std::vector<int>& cardinalities,
                                         const DownstreamConfig& cfg) {
  if (cfg.train_sizes.empty()) throw InputError("need at least one training size");
  DownstreamReport rep;
  const auto k_count = pool.factors.cols();
  for (std::size_t size : cfg.train_sizes) {
    if (size > static_cast<std::size_t>(pool.factors.rows()))
      throw InputError("training size " + std::to_string(size) + " exceeds the available samples");
    if (size < 2) throw InputError("training size must be at least 2");
    const Eigen::MatrixXd x = pool.representations.topRows(static_cast<Eigen::Index>(size));
    std::vector<double> accs;
    for (Eigen::Index k = 0; k < k_count; ++k) {
      const int card = cardinalities[static_cast<std::size_t>(k)];
      Labels y = column_labels(pool.factors, k);
      y.resize(size);
      if (std::adjacent_find(y.begin(), y.end(), std::not_equal_to<>()) == y.end()) {
        accs.push_back(1.0 / static_cast<double>(card));
        rep.flags.push_back("degenerate_labels:size=" + std::to_string(size) + ",factor=" + std::to_string(k));
        continue;
      }
      const ClassifierModel m = cfg.learner == Learner::kLogistic
                                    ? fit_logistic_cv(x, y, std::min<int>(5, static_cast<int>(size)), 10, cfg.cv_seed, card)
                                    : fit_tree_ensemble(x, y, cfg.trees, 0, card);
      accs.push_back(m.accuracy(test.representations, column_labels(test.factors, k)));
    }
    rep.accuracy[size] = std::accumulate(accs.begin(), accs.end(), 0.0) / static_cast<double>(accs.size());
    rep.per_factor[size] = accs;
  }
  rep.efficiency_large = *std::max_element(cfg.train_sizes.begin(), cfg.train_sizes.end());
  rep.efficiency_small = cfg.efficiency_small;
  if (rep.accuracy.count(cfg.efficiency_small) != 0)
    rep.efficiency = statistical_efficiency(rep.accuracy[cfg.efficiency_small], rep.accuracy[rep.efficiency_large]);
  else
    rep.flags.push_back("efficiency_unavailable");
  return rep;
}

DownstreamReport downstream_eval(const GroundTruthModel& model, const RepresentationFunction& rep, Rng& rng,
                                 const DownstreamConfig& cfg) {
  if (cfg.train_sizes.empty()) throw InputError("need at least one training size");
  const std::size_t largest = *std::max_element(cfg.train_sizes.begin(), cfg.train_sizes.end());
  const Sample pool = draw_sample(model, rep, largest, rng);
  const Sample test = draw_sample(model, rep, cfg.n_test, rng);
  return downstream_from_samples(pool, test, model.factor_space().cardinalities(), cfg);
}

UnsupervisedScores unsupervised_scores(const VaeModel& vae, const GroundTruthModel& data, Rng& rng, std::size_t n,
                                       int bins) {
  if (n < 2) throw InputError("unsupervised scores need at least 2 samples");
  const auto d = static_cast<Eigen::Index>(vae.latent_dim());
  Eigen::MatrixXd means(static_cast<Eigen::Index>(n), d), samples(static_cast<Eigen::Index>(n), d);
  double recon = 0.0, kl = 0.0;
  constexpr std::size_t kChunk = 1000;
  for (std::size_t start = 0; start < n; start += kChunk) {
    const std::size_t m = std::min(kChunk, n - start);
    const Tensor x = to_tensor(data.render_batch(data.sample_factors(m, rng), rng));
    const EncoderOutput enc = vae.encode(x);
    Tensor eps(m, vae.latent_dim());
    for (double& v : eps.data) v = rng.normal();
    const Tensor z = reparameterize(enc, eps);
    Graph g;
    recon += recon_nll(g.constant(vae.decode_logits(z)), g.constant(x)).value().item() * static_cast<double>(m);
    kl += kl_term(g.constant(enc.mean), g.constant(enc.log_variance)).value().item() * static_cast<double>(m);
    for (std::size_t i = 0; i < m; ++i)
      for (Eigen::Index j = 0; j < d; ++j) {
        means(static_cast<Eigen::Index>(start + i), j) = enc.mean(i, static_cast<std::size_t>(j));
        samples(static_cast<Eigen::Index>(start + i), j) = z(i, static_cast<std::size_t>(j));
      }
  }
  UnsupervisedScores s;
  s.recon = recon / static_cast<double>(n);
  s.kl = kl / static_cast<double>(n);
  s.elbo = -(s.recon + s.kl);
  const GaussianTc tm = gaussian_total_correlation(means);
  const GaussianTc ts = gaussian_total_correlation(samples);
  s.tc_mean = tm.value;
  s.tc_sampled = ts.value;
  if (tm.jittered) s.flags.push_back("tc_mean_jittered");
  if (ts.jittered) s.flags.push_back("tc_sampled_jittered");
  s.mi_mean = d >= 2 ? average_pairwise_mi(means, bins) : 0.0;
  s.mi_sampled = d >= 2 ? average_pairwise_mi(samples, bins) : 0.0;
  return s;
}

// --- bundled evaluation -------------------------------------------------------------

MetricSettings MetricSettings::standard() {
  MetricSettings s;
  DownstreamConfig tree;
  tree.learner = Learner::kTree;
  s.downstream = {DownstreamConfig{}, tree};
  return s;
}

MetricSettings MetricSettings::desk() {
  MetricSettings s;
  s.beta_vae.n_train = 1000;
  s.beta_vae.n_test = 500;
  s.factor_vae.n_train = 1000;
  s.factor_vae.n_test = 500;
  s.factor_vae.n_variance = 5000;
  s.sample.n = 5000;
  s.sample.n_train = 5000;
  s.sample.n_test = 2500;
  DownstreamConfig logistic;
  logistic.train_sizes = {10, 100, 1000, 2500};
  logistic.n_test = 2500;
  DownstreamConfig tree = logistic;
  tree.learner = Learner::kTree;
  s.downstream = {logistic, tree};
  return s;
}

namespace {

std::vector<std::string> resolve_metric_names(const std::vector<std::string>& requested) {
  if (requested.empty()) return kMetricNames;
  for (const auto& m : requested)
    if (std::find(kMetricNames.begin(), kMetricNames.end(), m) == kMetricNames.end())
      throw ConfigError("unknown metric '" + m + "'");
  return requested;
}

std::uint64_t metric_stream(const std::string& name) {
  const auto it = std::find(kMetricNames.begin(), kMetricNames.end(), name);
  return static_cast<std::uint64_t>(it - kMetricNames.begin()) + 1;
}

template <class F>
void guarded(MetricScores& out, const std::string& name, F f) {
  try {
    out.scores[name] = f();
  } catch (const InputError& e) {
    out.scores[name] = std::nullopt;
    out.unavailable[name] = e.what();
  }
}

}  // namespace

MetricScores evaluate_metrics(const GroundTruthModel& model, const RepresentationFunction& rep, std::uint64_t seed,
                              const MetricSettings& settings, const std::vector<std::string>& metrics) {
  const Rng root(seed);
  MetricScores out;
  for (const auto& name : resolve_metric_names(metrics)) {
    Rng rng = root.split(metric_stream(name));
    guarded(out, name, [&]() -> double {
      if (name == "beta_vae_score") return beta_vae_metric(model, rep, rng, settings.beta_vae).score;
      if (name == "factor_vae_score") return factor_vae_metric(model, rep, rng, settings.factor_vae).score;
      if (name == "mig") return mig(model, rep, rng, settings.sample).score;
      if (name == "modularity") return modularity(model, rep, rng, settings.sample).score;
      if (name == "dci_disentanglement") return dci_disentanglement(model, rep, rng, settings.sample).score;
      return sap(model, rep, rng, settings.sample).score;
    });
  }
  for (std::size_t i = 0; i < settings.downstream.size(); ++i) {
    Rng rng = root.split(100 + i);
    const auto& cfg = settings.downstream[i];
    out.downstream[to_string(cfg.learner)] = downstream_eval(model, rep, rng, cfg);
  }
  return out;
}

MetricScores evaluate_table(const ExternalTable& table, std::uint64_t seed, const MetricSettings& settings,
                            const std::vector<std::string>& metrics) {
  const auto n = table.factors.rows();
  if (n < 3) throw InputError("table needs at least 3 rows");
  if ((table.factors.array() < 0).any()) throw InputError("factor values must be non-negative");
  std::vector<int> cards;
  for (Eigen::Index k = 0; k < table.factors.cols(); ++k) cards.push_back(table.factors.col(k).maxCoeff() + 1);
  const Sample all{table.factors, table.representations};
  const Eigen::Index n_test = n / 3;
  const Sample train{table.factors.topRows(n - n_test), table.representations.topRows(n - n_test)};
  const Sample test{table.factors.bottomRows(n_test), table.representations.bottomRows(n_test)};

  MetricScores out;
  for (const auto& name : resolve_metric_names(metrics)) {
    if (name == "beta_vae_score" || name == "factor_vae_score") {
      out.scores[name] = std::nullopt;
      out.unavailable[name] = "unavailable: requires generative access";
      continue;
    }
    guarded(out, name, [&]() -> double {
      if (name == "mig") return mig_from_sample(all, empirical_entropies(all.factors), settings.sample.bins).score;
      if (name == "modularity") return modularity_from_sample(all, settings.sample.bins).score;
      if (name == "dci_disentanglement") return dci_from_samples(train, test, cards, settings.sample.trees).score;
      return sap_from_samples(train, test, cards).score;
    });
  }
  for (std::size_t i = 0; i < settings.downstream.size(); ++i) {
    DownstreamConfig cfg = settings.downstream[i];
    cfg.cv_seed = derive_seed(seed, 100 + i);
    std::vector<std::size_t> sizes;
    for (std::size_t s : cfg.train_sizes)
      if (s <= static_cast<std::size_t>(train.factors.rows())) sizes.push_back(s);
    if (sizes.empty()) continue;
    cfg.train_sizes = sizes;
    DownstreamReport r = downstream_from_samples(train, test, cards, cfg);
    if (sizes.size() != settings.downstream[i].train_sizes.size()) r.flags.push_back("train_sizes_capped");
    out.downstream[to_string(cfg.learner)] = r;
  }
  return out;
}

}  // namespace disent
