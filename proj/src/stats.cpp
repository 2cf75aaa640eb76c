#include "disent/stats.hpp"

#include <algorithm>
#include <cmath>
#include <map>
#include <numeric>

#include "disent/errors.hpp"
#include "disent/rng.hpp"

namespace disent {

int class_count(const Labels& y) {
  int k = 0;
  for (int v : y) {
    if (v < 0) throw InputError("class labels must be non-negative");
    k = std::max(k, v + 1);
  }
  return k;
}

namespace {

int resolve_classes(const Labels& y, int requested) {
  const int implied = class_count(y);
  if (requested == 0) return implied;
  if (requested < implied) throw InputError("label exceeds the declared class count");
  return requested;
}

bool single_class(const Labels& y) {
  return std::adjacent_find(y.begin(), y.end(), std::not_equal_to<>()) == y.end();
}

void check_xy(const Eigen::MatrixXd& x, const Labels& y) {
  if (x.rows() != static_cast<Eigen::Index>(y.size())) throw InputError("feature rows and label count differ");
  if (y.empty()) throw InputError("cannot fit a classifier on zero samples");
}

Eigen::MatrixXd softmax_rows(const Eigen::MatrixXd& scores) {
  Eigen::MatrixXd p(scores.rows(), scores.cols());
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    const double mx = scores.row(i).maxCoeff();
    double s = 0.0;
    for (Eigen::Index k = 0; k < scores.cols(); ++k) {
      p(i, k) = std::exp(scores(i, k) - mx);
      s += p(i, k);
    }
    p.row(i) /= s;
  }
  return p;
}

Labels argmax_rows(const Eigen::MatrixXd& scores) {
  Labels out(static_cast<std::size_t>(scores.rows()));
  for (Eigen::Index i = 0; i < scores.rows(); ++i) {
    Eigen::Index best = 0;
    for (Eigen::Index k = 1; k < scores.cols(); ++k)
      if (scores(i, k) > scores(i, best)) best = k;
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

// --- multinomial logistic regression -----------------------------------------

struct LogisticProblem {
  const Eigen::MatrixXd& xa;  // standardized features with a trailing ones column
  const Labels& y;
  int classes;
  double lambda;      // on weights
  double bias_ridge;  // on biases, only to pin the softmax gauge

  Eigen::Index width() const { return xa.cols(); }

  double objective(const Eigen::MatrixXd& theta) const {
    const Eigen::MatrixXd s = xa * theta.transpose();
    double loss = 0.0;
    for (Eigen::Index i = 0; i < s.rows(); ++i) {
      const double mx = s.row(i).maxCoeff();
      double z = 0.0;
      for (Eigen::Index k = 0; k < s.cols(); ++k) z += std::exp(s(i, k) - mx);
      loss += mx + std::log(z) - s(i, y[static_cast<std::size_t>(i)]);
    }
    loss /= static_cast<double>(s.rows());
    const Eigen::Index p = width() - 1;
    return loss + 0.5 * lambda * theta.leftCols(p).squaredNorm() + 0.5 * bias_ridge * theta.col(p).squaredNorm();
  }
};

Eigen::MatrixXd newton_logistic(const LogisticProblem& prob) {
  const Eigen::Index n = prob.xa.rows();
  const Eigen::Index w = prob.width();
  const Eigen::Index p = w - 1;
  const int kc = prob.classes;
  const Eigen::Index dim = kc * w;
  Eigen::MatrixXd theta = Eigen::MatrixXd::Zero(kc, w);
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(n, kc);
  for (Eigen::Index i = 0; i < n; ++i) onehot(i, prob.y[static_cast<std::size_t>(i)]) = 1.0;

  double f = prob.objective(theta);
  for (int iter = 0; iter < 100; ++iter) {
    const Eigen::MatrixXd probs = softmax_rows(prob.xa * theta.transpose());
    Eigen::MatrixXd grad = (probs - onehot).transpose() * prob.xa / static_cast<double>(n);
    grad.leftCols(p) += prob.lambda * theta.leftCols(p);
    grad.col(p) += prob.bias_ridge * theta.col(p);
    if (grad.cwiseAbs().maxCoeff() < 1e-10) break;

    Eigen::MatrixXd hess = Eigen::MatrixXd::Zero(dim, dim);
    for (int k = 0; k < kc; ++k) {
      for (int l = k; l < kc; ++l) {
        Eigen::VectorXd wts = -probs.col(k).cwiseProduct(probs.col(l));
        if (k == l) wts += probs.col(k);
        const Eigen::MatrixXd block =
            (prob.xa.array().colwise() * wts.array()).matrix().transpose() * prob.xa / static_cast<double>(n);
        hess.block(k * w, l * w, w, w) = block;
        if (l != k) hess.block(l * w, k * w, w, w) = block.transpose();
      }
    }
    for (int k = 0; k < kc; ++k) {
      for (Eigen::Index a = 0; a < p; ++a) hess(k * w + a, k * w + a) += prob.lambda;
      hess(k * w + p, k * w + p) += prob.bias_ridge;
    }
    Eigen::VectorXd g(dim);
    for (int k = 0; k < kc; ++k) g.segment(k * w, w) = grad.row(k).transpose();
    const Eigen::VectorXd step = hess.ldlt().solve(g);
    Eigen::MatrixXd delta(kc, w);
    for (int k = 0; k < kc; ++k) delta.row(k) = step.segment(k * w, w).transpose();

    const double slope = g.dot(step);
    double t = 1.0;
    double f_new = f;
    Eigen::MatrixXd candidate;
    bool accepted = false;
    for (int ls = 0; ls < 40; ++ls) {
      candidate = theta - t * delta;
      f_new = prob.objective(candidate);
      if (std::isfinite(f_new) && f_new <= f - 1e-4 * t * slope) {
        accepted = true;
        break;
      }
      t *= 0.5;
    }
    if (!accepted) break;
    theta = candidate;
    const double improvement = f - f_new;
    f = f_new;
    if (improvement < 1e-15 * (1.0 + std::fabs(f))) break;
  }
  return theta;
}

void standardize_into(const Eigen::MatrixXd& x, ClassifierModel& m, bool rescale) {
  const double n = static_cast<double>(x.rows());
  m.feature_mean = x.colwise().mean();
  m.feature_scale = Eigen::RowVectorXd::Ones(x.cols());
  if (!rescale) return;
  for (Eigen::Index c = 0; c < x.cols(); ++c) {
    const double var = (x.col(c).array() - m.feature_mean(c)).square().sum() / n;
    m.feature_scale(c) = var > 1e-24 ? std::sqrt(var) : 1.0;
  }
}

Eigen::MatrixXd standardized(const Eigen::MatrixXd& x, const ClassifierModel& m) {
  return ((x.rowwise() - m.feature_mean).array().rowwise() / m.feature_scale.array()).matrix();
}

ClassifierModel fit_linear(const Eigen::MatrixXd& x, const Labels& y, double c, int num_classes,
                           ClassifierModel::Kind kind) {
  check_xy(x, y);
  if (!(c > 0.0)) throw InputError("inverse regularization strength must be positive");
  ClassifierModel m;
  m.kind = kind;
  m.num_classes = resolve_classes(y, num_classes);
  m.inverse_regularization = c;
  // The low-C classifier sees the raw (centered) feature so that its penalty
  // acts on the representation's own scale.
  standardize_into(x, m, kind == ClassifierModel::Kind::kLogistic);
  if (single_class(y)) {
    m.degenerate = true;
    m.constant_class = y.front();
    m.weights = Eigen::MatrixXd::Zero(m.num_classes, x.cols());
    m.bias = Eigen::VectorXd::Zero(m.num_classes);
    return m;
  }
  Eigen::MatrixXd xa(x.rows(), x.cols() + 1);
  xa.leftCols(x.cols()) = standardized(x, m);
  xa.col(x.cols()).setOnes();
  const double lambda = 1.0 / (c * static_cast<double>(x.rows()));
  LogisticProblem prob{xa, y, m.num_classes, lambda, 1e-8};
  const Eigen::MatrixXd theta = newton_logistic(prob);
  m.weights = theta.leftCols(x.cols());
  m.bias = theta.col(x.cols());
  return m;
}

// --- gradient-boosted trees -------------------------------------------------------

struct TreeBuilder {
  const Eigen::MatrixXd& x;
  const std::vector<std::vector<int>>& order;  // per feature, samples sorted by value
  const std::vector<double>& residual;
  const std::vector<double>& hessian;
  double leaf_scale;
  int max_depth;
  std::vector<int> node_of;  // sample -> current node id
  Eigen::VectorXd* importance;

  RegressionTree tree;

  void build(const std::vector<int>& samples) {
    tree.nodes.clear();
    node_of.assign(static_cast<std::size_t>(x.rows()), -1);
    tree.nodes.push_back({});
    for (int s : samples) node_of[static_cast<std::size_t>(s)] = 0;
    grow(0, samples, 0);
  }

  void make_leaf(int node, const std::vector<int>& samples) {
    double num = 0.0, den = 0.0;
    for (int s : samples) {
      num += residual[static_cast<std::size_t>(s)];
      den += hessian[static_cast<std::size_t>(s)];
    }
    tree.nodes[static_cast<std::size_t>(node)].value = den > 1e-150 ? leaf_scale * num / den : 0.0;
  }

  void grow(int node, const std::vector<int>& samples, int depth) {
    if (depth >= max_depth || samples.size() < 2) {
      make_leaf(node, samples);
      return;
    }
    double total = 0.0;
    for (int s : samples) total += residual[static_cast<std::size_t>(s)];
    const double n = static_cast<double>(samples.size());
    const double parent_term = total * total / n;

    int best_feature = -1;
    double best_gain = 1e-12;
    double best_threshold = 0.0;
    for (Eigen::Index f = 0; f < x.cols(); ++f) {
      double left_sum = 0.0;
      std::size_t left_n = 0;
      int prev = -1;
      for (int s : order[static_cast<std::size_t>(f)]) {
        if (node_of[static_cast<std::size_t>(s)] != node) continue;
        if (prev >= 0 && x(s, f) > x(prev, f)) {
          const double right_sum = total - left_sum;
          const double ln = static_cast<double>(left_n);
          const double rn = n - ln;
          const double gain = left_sum * left_sum / ln + right_sum * right_sum / rn - parent_term;
          if (gain > best_gain) {
            best_gain = gain;
            best_feature = static_cast<int>(f);
            best_threshold = 0.5 * (x(prev, f) + x(s, f));
          }
        }
        left_sum += residual[static_cast<std::size_t>(s)];
        ++left_n;
        prev = s;
      }
    }
    if (best_feature < 0) {
      make_leaf(node, samples);
      return;
    }
    (*importance)(best_feature) += best_gain;
    std::vector<int> left, right;
    for (int s : samples) (x(s, best_feature) <= best_threshold ? left : right).push_back(s);
    const int li = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    const int ri = static_cast<int>(tree.nodes.size());
    tree.nodes.push_back({});
    auto& nd = tree.nodes[static_cast<std::size_t>(node)];
    nd.feature = best_feature;
    nd.threshold = best_threshold;
    nd.left = li;
    nd.right = ri;
    for (int s : left) node_of[static_cast<std::size_t>(s)] = li;
    for (int s : right) node_of[static_cast<std::size_t>(s)] = ri;
    grow(li, left, depth + 1);
    grow(ri, right, depth + 1);
  }
};

}  // namespace

double RegressionTree::predict(const double* row, Eigen::Index stride) const {
  int i = 0;
  while (nodes[static_cast<std::size_t>(i)].feature >= 0) {
    const auto& nd = nodes[static_cast<std::size_t>(i)];
    i = row[nd.feature * stride] <= nd.threshold ? nd.left : nd.right;
  }
  return nodes[static_cast<std::size_t>(i)].value;
}

Eigen::MatrixXd ClassifierModel::decision_scores(const Eigen::MatrixXd& x) const {
  Eigen::MatrixXd s = Eigen::MatrixXd::Zero(x.rows(), num_classes);
  if (degenerate) {
    s.col(constant_class).setOnes();
    return s;
  }
  if (kind == Kind::kTreeEnsemble) {
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
      for (int k = 0; k < num_classes; ++k) s(i, k) = initial_scores[static_cast<std::size_t>(k)];
      for (const auto& stage : stages)
        for (int k = 0; k < num_classes; ++k)
          s(i, k) += learning_rate * stage[static_cast<std::size_t>(k)].predict(&x(i, 0), x.rows());
    }
    return s;
  }
  if (x.cols() != weights.cols()) throw InputError("feature count does not match the fitted model");
  s = standardized(x, *this) * weights.transpose();
  s.rowwise() += bias.transpose();
  return s;
}

Labels ClassifierModel::predict(const Eigen::MatrixXd& x) const { return argmax_rows(decision_scores(x)); }

double ClassifierModel::accuracy(const Eigen::MatrixXd& x, const Labels& y) const {
  if (x.rows() != static_cast<Eigen::Index>(y.size())) throw InputError("feature rows and label count differ");
  if (y.empty()) return 0.0;
  const Labels pred = predict(x);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < y.size(); ++i) hit += pred[i] == y[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(y.size());
}

ClassifierModel fit_logistic(const Eigen::MatrixXd& x, const Labels& y, double inverse_regularization,
                             int num_classes) {
  return fit_linear(x, y, inverse_regularization, num_classes, ClassifierModel::Kind::kLogistic);
}

std::vector<double> regularization_grid(int count) {
  if (count < 1) throw InputError("regularization grid needs at least one value");
  std::vector<double> grid;
  for (int i = 0; i < count; ++i)
    grid.push_back(count == 1 ? 1.0 : std::pow(10.0, -4.0 + 8.0 * i / (count - 1)));
  return grid;
}

ClassifierModel fit_logistic_cv(const Eigen::MatrixXd& x, const Labels& y, int folds, int n_reg_values,
                                std::uint64_t seed, int num_classes) {
  check_xy(x, y);
  if (folds < 2) throw InputError("cross-validation needs at least 2 folds");
  if (static_cast<int>(y.size()) < folds) throw InputError("fewer samples than folds");
  const int classes = resolve_classes(y, num_classes);
  if (single_class(y)) return fit_logistic(x, y, 1.0, classes);

  std::vector<int> perm(y.size());
  std::iota(perm.begin(), perm.end(), 0);
  Rng rng(seed);
  std::shuffle(perm.begin(), perm.end(), rng.engine());
  std::vector<int> fold_of(y.size());
  for (std::size_t i = 0; i < perm.size(); ++i)
    fold_of[static_cast<std::size_t>(perm[i])] = static_cast<int>(i * static_cast<std::size_t>(folds) / perm.size());

  const auto grid = regularization_grid(n_reg_values);
  double best_acc = -1.0;
  double best_c = grid.front();
  for (double c : grid) {
    double acc_sum = 0.0;
    for (int f = 0; f < folds; ++f) {
      std::vector<Eigen::Index> tr, te;
      for (std::size_t i = 0; i < y.size(); ++i) (fold_of[i] == f ? te : tr).push_back(static_cast<Eigen::Index>(i));
      Eigen::MatrixXd xtr = x(tr, Eigen::all);
      Eigen::MatrixXd xte = x(te, Eigen::all);
      Labels ytr, yte;
      for (auto i : tr) ytr.push_back(y[static_cast<std::size_t>(i)]);
      for (auto i : te) yte.push_back(y[static_cast<std::size_t>(i)]);
      acc_sum += fit_logistic(xtr, ytr, c, classes).accuracy(xte, yte);
    }
    const double acc = acc_sum / folds;
    if (acc > best_acc) {
      best_acc = acc;
      best_c = c;
    }
  }
  return fit_logistic(x, y, best_c, classes);
}

ClassifierModel fit_linear_low_reg(const Eigen::MatrixXd& x_single, const Labels& y, double strength,
                                   int num_classes) {
  if (x_single.cols() != 1) throw InputError("fit_linear_low_reg expects exactly one feature column");
  return fit_linear(x_single, y, strength, num_classes, ClassifierModel::Kind::kLinearLowReg);
}

ClassifierModel fit_tree_ensemble(const Eigen::MatrixXd& x, const Labels& y, TreeEnsembleConfig config,
                                  std::uint64_t /*seed*/, int num_classes) {
  check_xy(x, y);
  if (y.size() < 2) throw InputError("tree ensemble needs at least 2 samples");
  if (config.stages < 1 || config.depth < 1) throw InputError("tree ensemble needs stages >= 1 and depth >= 1");
  ClassifierModel m;
  m.kind = ClassifierModel::Kind::kTreeEnsemble;
  m.num_classes = resolve_classes(y, num_classes);
  m.learning_rate = config.learning_rate;
  m.importances = Eigen::VectorXd::Zero(x.cols());
  if (single_class(y)) {
    m.degenerate = true;
    m.constant_class = y.front();
    m.importances_all_zero = true;
    return m;
  }
  const auto n = static_cast<std::size_t>(x.rows());
  const int kc = m.num_classes;
  std::vector<double> counts(static_cast<std::size_t>(kc), 0.0);
  for (int v : y) counts[static_cast<std::size_t>(v)] += 1.0;
  for (double c : counts) m.initial_scores.push_back(std::log(std::max(c / static_cast<double>(n), 1e-12)));

  std::vector<std::vector<int>> order(static_cast<std::size_t>(x.cols()));
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    auto& o = order[static_cast<std::size_t>(f)];
    o.resize(n);
    std::iota(o.begin(), o.end(), 0);
    std::stable_sort(o.begin(), o.end(), [&](int a, int b) { return x(a, f) < x(b, f); });
  }
  std::vector<int> all(n);
  std::iota(all.begin(), all.end(), 0);

  Eigen::MatrixXd scores(x.rows(), kc);
  for (int k = 0; k < kc; ++k) scores.col(k).setConstant(m.initial_scores[static_cast<std::size_t>(k)]);
  std::vector<double> residual(n), hessian(n);
  const double leaf_scale = static_cast<double>(kc - 1) / static_cast<double>(kc);
  for (int stage = 0; stage < config.stages; ++stage) {
    const Eigen::MatrixXd probs = softmax_rows(scores);
    std::vector<RegressionTree> trees;
    for (int k = 0; k < kc; ++k) {
      for (std::size_t i = 0; i < n; ++i) {
        const double r = (y[i] == k ? 1.0 : 0.0) - probs(static_cast<Eigen::Index>(i), k);
        residual[i] = r;
        hessian[i] = std::fabs(r) * (1.0 - std::fabs(r));
      }
      TreeBuilder b{x, order, residual, hessian, leaf_scale, config.depth, {}, &m.importances, {}};
      b.build(all);
      trees.push_back(std::move(b.tree));
    }
    for (std::size_t i = 0; i < n; ++i)
      for (int k = 0; k < kc; ++k)
        scores(static_cast<Eigen::Index>(i), k) +=
            config.learning_rate * trees[static_cast<std::size_t>(k)].predict(&x(static_cast<Eigen::Index>(i), 0), x.rows());
    m.stages.push_back(std::move(trees));
  }
  const double total = m.importances.sum();
  if (total > 0.0) {
    m.importances /= total;
  } else {
    m.importances_all_zero = true;
  }
  return m;
}

// --- information measures ---------------------------------------------------------

std::vector<int> bin_values(std::span<const double> values, int bins) {
  if (bins < 1) throw InputError("need at least one bin");
  std::vector<int> out(values.size(), 0);
  if (values.empty()) return out;
  const auto [lo_it, hi_it] = std::minmax_element(values.begin(), values.end());
  const double lo = *lo_it, hi = *hi_it;
  if (!(hi > lo)) return out;
  for (std::size_t i = 0; i < values.size(); ++i) {
    const int b = static_cast<int>(std::floor((values[i] - lo) / (hi - lo) * bins));
    out[i] = std::clamp(b, 0, bins - 1);
  }
  return out;
}

namespace {

/// Relabels to 0..levels-1 in order of first sorted value.
std::vector<int> compact(std::span<const int> labels, int& levels) {
  std::vector<int> uniq(labels.begin(), labels.end());
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  levels = static_cast<int>(uniq.size());
  std::vector<int> out(labels.size());
  for (std::size_t i = 0; i < labels.size(); ++i)
    out[i] = static_cast<int>(std::lower_bound(uniq.begin(), uniq.end(), labels[i]) - uniq.begin());
  return out;
}

}  // namespace

double discrete_entropy(std::span<const int> labels) {
  if (labels.empty()) return 0.0;
  int levels = 0;
  const auto c = compact(labels, levels);
  std::vector<double> counts(static_cast<std::size_t>(levels), 0.0);
  for (int v : c) counts[static_cast<std::size_t>(v)] += 1.0;
  const double n = static_cast<double>(labels.size());
  double h = 0.0;
  for (double k : counts)
    if (k > 0.0) h -= (k / n) * std::log(k / n);
  return h;
}

double discrete_mutual_information(std::span<const int> a, std::span<const int> b) {
  if (a.size() != b.size()) throw InputError("mutual information needs equal-length samples");
  if (a.empty()) return 0.0;
  int la = 0, lb = 0;
  const auto ca = compact(a, la);
  const auto cb = compact(b, lb);
  std::vector<double> joint(static_cast<std::size_t>(la) * static_cast<std::size_t>(lb), 0.0);
  std::vector<double> pa(static_cast<std::size_t>(la), 0.0), pb(static_cast<std::size_t>(lb), 0.0);
  for (std::size_t i = 0; i < ca.size(); ++i) {
    joint[static_cast<std::size_t>(ca[i]) * static_cast<std::size_t>(lb) + static_cast<std::size_t>(cb[i])] += 1.0;
    pa[static_cast<std::size_t>(ca[i])] += 1.0;
    pb[static_cast<std::size_t>(cb[i])] += 1.0;
  }
  const double n = static_cast<double>(a.size());
  double mi = 0.0;
  for (int i = 0; i < la; ++i)
    for (int j = 0; j < lb; ++j) {
      const double c = joint[static_cast<std::size_t>(i) * static_cast<std::size_t>(lb) + static_cast<std::size_t>(j)];
      if (c > 0.0) mi += (c / n) * std::log(c * n / (pa[static_cast<std::size_t>(i)] * pb[static_cast<std::size_t>(j)]));
    }
  return std::max(mi, 0.0);
}

double discrete_mi(std::span<const double> x, std::span<const int> y, int bins_x) {
  if (x.size() != y.size()) throw InputError("mutual information needs equal-length samples");
  const auto bx = bin_values(x, bins_x);
  return discrete_mutual_information(bx, y);
}

std::vector<double> fractional_ranks(std::span<const double> values) {
  const std::size_t n = values.size();
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return values[a] < values[b]; });
  std::vector<double> ranks(n);
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && values[idx[j + 1]] == values[idx[i]]) ++j;
    const double r = 0.5 * static_cast<double>(i + j) + 1.0;
    for (std::size_t k = i; k <= j; ++k) ranks[idx[k]] = r;
    i = j + 1;
  }
  return ranks;
}

std::optional<double> spearman(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) throw InputError("spearman needs equal-length samples");
  if (a.size() < 2) throw InputError("spearman needs at least 2 samples");
  const auto ra = fractional_ranks(a);
  const auto rb = fractional_ranks(b);
  const double n = static_cast<double>(a.size());
  const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
  const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
  double sab = 0.0, saa = 0.0, sbb = 0.0;
  for (std::size_t i = 0; i < ra.size(); ++i) {
    sab += (ra[i] - ma) * (rb[i] - mb);
    saa += (ra[i] - ma) * (ra[i] - ma);
    sbb += (rb[i] - mb) * (rb[i] - mb);
  }
  if (saa <= 0.0 || sbb <= 0.0) return std::nullopt;
  return std::clamp(sab / std::sqrt(saa * sbb), -1.0, 1.0);
}

OlsResult ols_variance_explained(std::span<const double> scores, const std::vector<std::string>& levels) {
  if (scores.size() != levels.size()) throw InputError("scores and predictor levels differ in length");
  std::vector<std::string> uniq(levels);
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end()), uniq.end());
  if (uniq.size() < 2) throw InputError("OLS needs at least 2 distinct predictor levels");
  const std::size_t cols = uniq.size();  // intercept + (levels - 1) dummies
  if (scores.size() <= cols) throw InputError("OLS needs more records than design columns");
  const auto n = static_cast<Eigen::Index>(scores.size());
  Eigen::MatrixXd design = Eigen::MatrixXd::Zero(n, static_cast<Eigen::Index>(cols));
  Eigen::VectorXd target(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    design(i, 0) = 1.0;
    const auto lvl = std::lower_bound(uniq.begin(), uniq.end(), levels[static_cast<std::size_t>(i)]) - uniq.begin();
    if (lvl > 0) design(i, lvl) = 1.0;
    target(i) = scores[static_cast<std::size_t>(i)];
  }
  Eigen::CompleteOrthogonalDecomposition<Eigen::MatrixXd> cod(design);
  const Eigen::VectorXd beta = cod.solve(target);
  const Eigen::VectorXd resid = target - design * beta;
  const double mean = target.mean();
  const double ss_tot = (target.array() - mean).square().sum();
  const double ss_res = resid.squaredNorm();
  OlsResult r;
  r.dummy_columns = cols - 1;
  r.rank_deficient = cod.rank() < static_cast<Eigen::Index>(cols);
  r.r2 = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : 1.0;
  return r;
}

double ks_statistic(std::span<const double> a, std::span<const double> b) {
  if (a.empty() || b.empty()) throw InputError("KS statistic needs two nonempty samples");
  std::vector<double> sa(a.begin(), a.end()), sb(b.begin(), b.end());
  std::sort(sa.begin(), sa.end());
  std::sort(sb.begin(), sb.end());
  const double na = static_cast<double>(sa.size()), nb = static_cast<double>(sb.size());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < sa.size() || j < sb.size()) {
    double v;
    if (j >= sb.size()) v = sa[i];
    else if (i >= sa.size()) v = sb[j];
    else v = std::min(sa[i], sb[j]);
    while (i < sa.size() && sa[i] <= v) ++i;
    while (j < sb.size() && sb[j] <= v) ++j;
    d = std::max(d, std::fabs(static_cast<double>(i) / na - static_cast<double>(j) / nb));
  }
  return d;
}

}  // namespace disent
