#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numbers>
#include <vector>

#include "checks.hpp"
#include "disent/errors.hpp"
#include "disent/factor_models.hpp"
#include "disent/vae.hpp"
#include "doctest.h"

using namespace disent;
using disent::testing::max_fd_error;
using disent::testing::random_tensor;

namespace {

constexpr std::size_t kWidth = 16;
constexpr std::size_t kBatch = 8;

VaeArchitecture tiny_arch() {
  VaeArchitecture a;
  a.latent_dim = 3;
  a.hidden = {10};
  a.discriminator_hidden = {8};
  return a;
}

std::vector<Tensor*> model_tensors(VaeModel& m) {
  std::vector<Tensor*> out;
  for (auto& t : m.encoder().tensors) out.push_back(&t);
  for (auto& t : m.decoder().tensors) out.push_back(&t);
  return out;
}

void randomize_biases(ParameterSet& p, Rng& rng) {
  for (std::size_t t = 1; t < p.tensors.size(); t += 2)
    for (auto& b : p.tensors[t].data) b = rng.uniform(-0.3, 0.3);
}

Tensor standard_normal_tensor(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t(rows, cols);
  for (auto& v : t.data) v = rng.normal();
  return t;
}

double log_normal_pdf(double z, double mu, double logvar) {
  return -0.5 * (std::log(2.0 * std::numbers::pi) + logvar + (z - mu) * (z - mu) / std::exp(logvar));
}

double log_sum_exp(const std::vector<double>& v) {
  double m = v[0];
  for (double x : v) m = std::max(m, x);
  double s = 0.0;
  for (double x : v) s += std::exp(x - m);
  return m + std::log(s);
}

// Plain-loop minibatch-weighted-sampling estimate.
double mws_oracle(const Tensor& z, const Tensor& mu, const Tensor& lv, double n_data) {
  const std::size_t m = z.rows(), d = z.cols();
  const double log_norm = std::log(n_data * static_cast<double>(m));
  double total = 0.0;
  for (std::size_t i = 0; i < m; ++i) {
    std::vector<double> joint(m, 0.0);
    double marginals = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
      std::vector<double> dim(m);
      for (std::size_t j = 0; j < m; ++j) {
        dim[j] = log_normal_pdf(z(i, k), mu(j, k), lv(j, k));
        joint[j] += dim[j];
      }
      marginals += log_sum_exp(dim) - log_norm;
    }
    total += (log_sum_exp(joint) - log_norm) - marginals;
  }
  return total / static_cast<double>(m);
}

struct Fixture {
  VaeModel model;
  Discriminator disc;
  Tensor x, eps, x2, eps2;

  explicit Fixture(std::uint64_t seed) {
    Rng rng(seed);
    model = VaeModel::create(kWidth, tiny_arch(), rng);
    randomize_biases(model.encoder(), rng);
    randomize_biases(model.decoder(), rng);
    disc = Discriminator::create(3, tiny_arch(), rng);
    randomize_biases(disc.params, rng);
    x = random_tensor(kBatch, kWidth, rng, 0.0, 1.0);
    eps = standard_normal_tensor(kBatch, 3, rng);
    x2 = random_tensor(kBatch, kWidth, rng, 0.0, 1.0);
    eps2 = standard_normal_tensor(kBatch, 3, rng);
  }
};

}  // namespace

TEST_CASE("kl of N(1,1) against N(0,1) is one half") {
  Graph g;
  const Var kl = kl_term(g.constant(Tensor::row({1.0})), g.constant(Tensor::row({0.0})));
  CHECK(std::abs(kl.value().item() - 0.5) < 1e-15);
}

TEST_CASE("kl is zero at the prior and averages over the batch") {
  Graph g;
  CHECK(kl_term(g.constant(Tensor(4, 3, 0.0)), g.constant(Tensor(4, 3, 0.0))).value().item() == 0.0);
  // Rows: (mu=2, logvar=0) -> 2 and (mu=0, logvar=log 2) -> 0.5 (2 - 1 - log 2).
  Tensor mu(2, 1, {2.0, 0.0}), lv(2, 1, {0.0, std::log(2.0)});
  const double expect = 0.5 * (2.0 + 0.5 * (1.0 - std::log(2.0)));
  CHECK(std::abs(kl_term(g.constant(mu), g.constant(lv)).value().item() - expect) < 1e-14);
}

TEST_CASE("bernoulli reconstruction matches the closed form") {
  Graph g;
  const Tensor logits(1, 2, {0.0, 2.0});
  const Tensor x(1, 2, {1.0, 0.0});
  const double expect = std::log(2.0) + std::log1p(std::exp(2.0));
  CHECK(std::abs(recon_nll(g.constant(logits), g.constant(x)).value().item() - expect) < 1e-14);
}

TEST_CASE("annealed capacity ramps linearly and saturates") {
  CHECK(annealed_capacity(0, 25.0, 100) == 0.0);
  CHECK(annealed_capacity(50, 25.0, 100) == 12.5);
  CHECK(annealed_capacity(100, 25.0, 100) == 25.0);
  CHECK(annealed_capacity(1000, 25.0, 100) == 25.0);
  CHECK_THROWS_AS(annealed_capacity(1, 25.0, 0), ConfigError);
  CHECK_THROWS_AS(annealed_capacity(-1, 25.0, 10), ConfigError);
}

TEST_CASE("dip diagonal weight depends on the mode") {
  CHECK(ObjectiveConfig::make(ObjectiveKind::kDipVaeI, 5.0).lambda_d() == 50.0);
  CHECK(ObjectiveConfig::make(ObjectiveKind::kDipVaeII, 5.0).lambda_d() == 5.0);
  CHECK_THROWS_AS(ObjectiveConfig::make(ObjectiveKind::kBetaVae, 5.0).lambda_d(), UsageError);
}

TEST_CASE("objective names, hyperparameters and grids") {
  const std::vector<std::pair<std::string, std::string>> names{
      {"beta_vae", "beta"},         {"annealed_vae", "c_max"},  {"factor_vae", "gamma"},
      {"beta_tcvae", "beta"},       {"dip_vae_i", "lambda_od"}, {"dip_vae_ii", "lambda_od"}};
  REQUIRE(all_objectives().size() == 6);
  for (std::size_t i = 0; i < 6; ++i) {
    const auto k = all_objectives()[i];
    CHECK(to_string(k) == names[i].first);
    CHECK(objective_from_string(names[i].first) == k);
    CHECK(ObjectiveConfig::make(k, 1.0).hyperparameter_name() == names[i].second);
    CHECK(hyperparameter_grid(k).size() == 6);
  }
  CHECK(hyperparameter_grid(ObjectiveKind::kBetaVae) == std::vector<double>{1, 2, 4, 6, 8, 16});
  CHECK(hyperparameter_grid(ObjectiveKind::kAnnealedVae) == std::vector<double>{5, 10, 25, 50, 75, 100});
  CHECK(hyperparameter_grid(ObjectiveKind::kFactorVae) == std::vector<double>{10, 20, 30, 40, 50, 100});
  CHECK(hyperparameter_grid(ObjectiveKind::kBetaTcVae) == std::vector<double>{1, 2, 4, 6, 8, 10});
  CHECK(hyperparameter_grid(ObjectiveKind::kDipVaeI) == std::vector<double>{1, 2, 5, 10, 20, 50});
  CHECK(hyperparameter_grid(ObjectiveKind::kDipVaeII) == std::vector<double>{1, 2, 5, 10, 20, 50});
  CHECK_THROWS_AS(objective_from_string("vae"), ConfigError);
}

TEST_CASE("negative hyperparameters are rejected, NaN is not") {
  CHECK_THROWS_AS(ObjectiveConfig::make(ObjectiveKind::kBetaVae, -1.0).validate(), ConfigError);
  CHECK_NOTHROW(ObjectiveConfig::make(ObjectiveKind::kBetaVae, 0.0).validate());
  CHECK_NOTHROW(ObjectiveConfig::make(ObjectiveKind::kBetaVae, std::nan("")).validate());
}

TEST_CASE("mws estimate matches a plain-loop oracle") {
  Rng rng(3);
  const Tensor mu = random_tensor(6, 3, rng);
  const Tensor lv = random_tensor(6, 3, rng, -1.0, 0.5);
  const Tensor z = random_tensor(6, 3, rng, -2.0, 2.0);
  Graph g;
  const double tc = total_correlation_mws(g.constant(z), g.constant(mu), g.constant(lv), 6144.0).value().item();
  CHECK(std::abs(tc - mws_oracle(z, mu, lv, 6144.0)) < 1e-12);
}

TEST_CASE("mws estimate needs a batch of two") {
  Graph g;
  const Tensor one(1, 3, 0.0);
  CHECK_THROWS_AS(total_correlation_mws(g.constant(one), g.constant(one), g.constant(one), 10.0), UsageError);
}

TEST_CASE("dip covariance and penalty match hand arithmetic") {
  Graph g;
  // mu columns (1, -1) and (1, -1): covariance all ones.
  const Tensor mu(2, 2, {1.0, 1.0, -1.0, -1.0});
  const Tensor lv(2, 2, {0.0, std::log(3.0), 0.0, std::log(3.0)});
  const Tensor c1 = dip_covariance(g.constant(mu), g.constant(lv), DipMode::kI).value();
  CHECK(c1.data == std::vector<double>{1.0, 1.0, 1.0, 1.0});
  const Tensor c2 = dip_covariance(g.constant(mu), g.constant(lv), DipMode::kII).value();
  CHECK(std::abs(c2(0, 0) - 2.0) < 1e-14);
  CHECK(std::abs(c2(1, 1) - 4.0) < 1e-14);
  CHECK(c2(0, 1) == 1.0);
  // II: off-diagonal 2 * 1^2, diagonal (1^2 + 3^2).
  const double p = dip_vae_penalty(g.constant(mu), g.constant(lv), DipMode::kII, 2.0, 0.5).value().item();
  CHECK(std::abs(p - (2.0 * 2.0 + 0.5 * 10.0)) < 1e-12);
}

TEST_CASE("density ratio and discriminator loss match the closed forms") {
  Graph g;
  const Tensor joint(2, 2, {2.0, 0.0, 1.0, 1.0});
  const Tensor perm(2, 2, {0.0, 0.0, -1.0, 1.0});
  CHECK(density_ratio_tc(g.constant(joint)).value().item() == 1.0);
  auto ce = [](double a, double b, int cls) { return std::log(std::exp(a) + std::exp(b)) - (cls == 0 ? a : b); };
  const double expect = 0.5 * (0.5 * (ce(2, 0, 0) + ce(1, 1, 0)) + 0.5 * (ce(0, 0, 1) + ce(-1, 1, 1)));
  CHECK(std::abs(discriminator_loss(g.constant(joint), g.constant(perm)).value().item() - expect) < 1e-14);
}

TEST_CASE("shuffling columns permutes each column independently") {
  Rng rng(4);
  const Tensor z = random_tensor(50, 3, rng);
  const Tensor s = shuffle_columns(z, rng);
  bool moved = false;
  for (std::size_t c = 0; c < 3; ++c) {
    std::vector<double> a, b;
    for (std::size_t r = 0; r < 50; ++r) {
      a.push_back(z(r, c));
      b.push_back(s(r, c));
      moved = moved || z(r, c) != s(r, c);
    }
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    CHECK(a == b);
  }
  CHECK(moved);
}

TEST_CASE("all six objectives match finite differences") {
  for (const auto kind : all_objectives()) {
    CAPTURE(to_string(kind));
    Fixture f(17);
    const auto config = ObjectiveConfig::make(kind, hyperparameter_grid(kind)[2]);
    ObjectiveContext ctx;
    ctx.step = 40;
    ctx.annealed_threshold = 100;
    ctx.dataset_size = 6144.0;
    const Discriminator* disc = kind == ObjectiveKind::kFactorVae ? &f.disc : nullptr;
    const auto ev = evaluate_objective(f.model, config, f.x, f.eps, ctx, disc);
    CHECK(std::isfinite(ev.terms.total));
    // Losses reach ~1e4 under the annealed gamma, so a 1e-5 step is roundoff-bound.
    const double err = max_fd_error(
        model_tensors(f.model), ev.gradients,
        [&] { return evaluate_objective(f.model, config, f.x, f.eps, ctx, disc).terms.total; }, 1e-4);
    CHECK(err < 1e-4);
  }
}

TEST_CASE("factor vae discriminator gradients match finite differences") {
  Fixture f(23);
  const Rng shuffle(5);
  Rng r0 = shuffle;
  const auto step = factor_vae_step(f.model, f.disc, 30.0, f.x, f.eps, f.x2, f.eps2, r0);
  std::vector<Tensor*> ptrs;
  for (auto& t : f.disc.params.tensors) ptrs.push_back(&t);
  const double err = max_fd_error(ptrs, step.discriminator_gradients, [&] {
    Rng r = shuffle;
    return factor_vae_step(f.model, f.disc, 30.0, f.x, f.eps, f.x2, f.eps2, r).discriminator_loss;
  });
  CHECK(err < 1e-4);
  // The VAE half agrees with the plain objective evaluation.
  const auto ev = evaluate_objective(f.model, ObjectiveConfig::make(ObjectiveKind::kFactorVae, 30.0), f.x, f.eps, {},
                                     &f.disc);
  CHECK(ev.terms.total == step.vae_terms.total);
}

TEST_CASE("factor vae objective requires a discriminator") {
  Fixture f(2);
  CHECK_THROWS_AS(
      evaluate_objective(f.model, ObjectiveConfig::make(ObjectiveKind::kFactorVae, 10.0), f.x, f.eps, {}, nullptr),
      ConfigError);
}

TEST_CASE("beta 1 reduces beta-tcvae and beta-vae to the same elbo") {
  Fixture f(8);
  ObjectiveContext ctx;
  ctx.dataset_size = 6144.0;
  const auto a = evaluate_objective(f.model, ObjectiveConfig::make(ObjectiveKind::kBetaVae, 1.0), f.x, f.eps, ctx);
  const auto b = evaluate_objective(f.model, ObjectiveConfig::make(ObjectiveKind::kBetaTcVae, 1.0), f.x, f.eps, ctx);
  CHECK(std::abs(a.terms.total - b.terms.total) < 1e-12);
  CHECK(std::abs(a.terms.total - (a.terms.recon + a.terms.kl)) < 1e-12);
}

TEST_CASE("training is deterministic and improves reconstruction") {
  const auto data = GroundTruthModel::micro_sprites();
  TrainingConfig tc;
  tc.steps = 300;
  tc.batch_size = 16;
  tc.trace_every = 100;
  const auto arch = tiny_arch();
  const auto obj = ObjectiveConfig::make(ObjectiveKind::kBetaVae, 1.0);
  const auto a = train_model(obj, arch, data, 9, tc);
  const auto b = train_model(obj, arch, data, 9, tc);
  CHECK(a.steps == 300);
  CHECK(a.trace.size() == 4);
  for (std::size_t t = 0; t < a.vae.encoder().tensors.size(); ++t)
    CHECK(a.vae.encoder().tensors[t].data == b.vae.encoder().tensors[t].data);
  CHECK(a.final_terms.total == b.final_terms.total);

  TrainingConfig none = tc;
  none.steps = 0;
  const auto untrained = train_model(obj, arch, data, 9, none);
  CHECK(mean_recon_nll(a.vae, data, 500, 1) < mean_recon_nll(untrained.vae, data, 500, 1));
}

TEST_CASE("NaN hyperparameter diverges at step 0 with its loss terms") {
  const auto data = GroundTruthModel::micro_sprites();
  TrainingConfig tc;
  tc.steps = 5;
  tc.batch_size = 4;
  try {
    train_model(ObjectiveConfig::make(ObjectiveKind::kBetaVae, std::nan("")), tiny_arch(), data, 1, tc);
    FAIL("expected divergence");
  } catch (const TrainingDiverged& e) {
    CHECK(e.step() == 0);
    REQUIRE(e.terms().count("total") == 1);
    CHECK(std::isnan(e.terms().at("total")));
    CHECK(std::isfinite(e.terms().at("recon")));
  }
}

TEST_CASE("checkpoint round trip preserves parameters and metadata") {
  const auto data = GroundTruthModel::micro_sprites();
  TrainingConfig tc;
  tc.steps = 20;
  tc.batch_size = 8;
  const auto m = train_model(ObjectiveConfig::make(ObjectiveKind::kFactorVae, 20.0), tiny_arch(), data, 4, tc);
  const auto dir = std::filesystem::temp_directory_path() / "disent_test_ckpt";
  std::filesystem::remove_all(dir);
  save_checkpoint(m, dir);
  const auto back = load_checkpoint(dir);
  CHECK(back.objective.kind == ObjectiveKind::kFactorVae);
  CHECK(back.objective.value == 20.0);
  CHECK(back.seed == 4);
  CHECK(back.steps == 20);
  CHECK(back.vae.latent_dim() == 3);
  for (std::size_t t = 0; t < m.vae.decoder().tensors.size(); ++t)
    CHECK(back.vae.decoder().tensors[t].data == m.vae.decoder().tensors[t].data);
  REQUIRE(back.discriminator.has_value());
  CHECK(back.discriminator->params.tensors.back().data == m.discriminator->params.tensors.back().data);
  Rng rng(1);
  const Tensor x = to_tensor(data.render_batch(data.sample_factors(4, rng), rng));
  CHECK(back.vae.encode(x).mean.data == m.vae.encode(x).mean.data);
  std::filesystem::remove_all(dir);
  CHECK_THROWS_AS(load_checkpoint(dir), InputError);
}
