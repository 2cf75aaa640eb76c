#include <cmath>
#include <vector>

#include "checks.hpp"
#include "disent/autodiff.hpp"
#include "disent/errors.hpp"
#include "disent/nn.hpp"
#include "doctest.h"

using namespace disent;
using disent::testing::max_fd_error;
using disent::testing::random_tensor;

namespace {

ParameterSet zero_params(const MlpSpec& spec, std::size_t in) {
  ParameterSet p;
  std::size_t width = in;
  for (const auto& l : spec.layers) {
    p.tensors.emplace_back(width, l.width, 0.0);
    p.tensors.emplace_back(1, l.width, 0.0);
    width = l.width;
  }
  return p;
}

// Sum over pixels of softplus(l) - x l, batch mean.
double bernoulli_nll(const Tensor& logits, const Tensor& x) {
  double total = 0.0;
  for (std::size_t i = 0; i < logits.size(); ++i) {
    const double l = logits.data[i];
    total += std::max(l, 0.0) + std::log1p(std::exp(-std::abs(l))) - x.data[i] * l;
  }
  return total / static_cast<double>(logits.rows());
}

}  // namespace

TEST_CASE("mlp with zero parameters maps every input to zero") {
  const auto spec = MlpSpec::make({5, 4}, 3, Activation::kRelu);
  Rng rng(1);
  const auto out = mlp_apply(spec, zero_params(spec, 6), random_tensor(7, 6, rng));
  CHECK(out.rows() == 7);
  CHECK(out.cols() == 3);
  for (double v : out.data) CHECK(v == 0.0);
}

TEST_CASE("identity-weight relu layer clips negatives") {
  MlpSpec spec;
  spec.layers = {{2, Activation::kRelu}};
  ParameterSet p;
  p.tensors = {Tensor(2, 2, {1.0, 0.0, 0.0, 1.0}), Tensor(1, 2, 0.0)};
  const auto out = mlp_apply(spec, p, Tensor::row({-1.0, 2.0}));
  CHECK(out(0, 0) == 0.0);
  CHECK(out(0, 1) == 2.0);
}

TEST_CASE("two-layer net matches a hand-computed matrix product") {
  const auto spec = MlpSpec::make({3}, 2, Activation::kRelu);
  Rng rng(7);
  auto p = init_mlp(spec, 2, rng);
  for (auto& b : p.tensors[1].data) b = rng.uniform(-0.5, 0.5);
  for (auto& b : p.tensors[3].data) b = rng.uniform(-0.5, 0.5);
  const double x[2] = {0.3, -1.7};
  const auto& w1 = p.tensors[0];
  const auto& b1 = p.tensors[1];
  const auto& w2 = p.tensors[2];
  const auto& b2 = p.tensors[3];
  double h[3];
  for (int j = 0; j < 3; ++j) h[j] = std::max(0.0, x[0] * w1(0, j) + x[1] * w1(1, j) + b1(0, j));
  const auto out = mlp_apply(spec, p, Tensor::row({x[0], x[1]}));
  for (int k = 0; k < 2; ++k) {
    const double expect = h[0] * w2(0, k) + h[1] * w2(1, k) + h[2] * w2(2, k) + b2(0, k);
    CHECK(std::abs(out(0, k) - expect) < 1e-12);
  }
}

TEST_CASE("mlp input width mismatch is a configuration error") {
  const auto spec = MlpSpec::make({4}, 2, Activation::kRelu);
  Rng rng(0);
  const auto p = init_mlp(spec, 3, rng);
  CHECK_THROWS_AS(mlp_apply(spec, p, Tensor(2, 5)), ConfigError);
}

TEST_CASE("glorot init stays within its bound with zero biases") {
  const auto spec = MlpSpec::make({10}, 4, Activation::kRelu);
  Rng rng(3);
  const auto p = init_mlp(spec, 6, rng);
  const double bound1 = std::sqrt(6.0 / 16.0), bound2 = std::sqrt(6.0 / 14.0);
  for (double v : p.tensors[0].data) CHECK(std::abs(v) <= bound1);
  for (double v : p.tensors[2].data) CHECK(std::abs(v) <= bound2);
  for (double v : p.tensors[1].data) CHECK(v == 0.0);
  for (double v : p.tensors[3].data) CHECK(v == 0.0);
}

TEST_CASE("gradient of w squared at 3 is 6") {
  Graph g;
  const Var w = g.parameter(Tensor::scalar(3.0));
  const Var loss = square(w);
  const std::vector<Var> wrt{w};
  CHECK(g.gradients(loss, wrt)[0].item() == 6.0);
}

TEST_CASE("disconnected parameter receives an exact zero gradient") {
  Graph g;
  const Var w = g.parameter(Tensor::scalar(2.0));
  const Var p = g.parameter(Tensor(2, 3, 1.5));
  const Var loss = w * w * w;
  const std::vector<Var> wrt{w, p};
  const auto grads = g.gradients(loss, wrt);
  CHECK(grads[0].item() == doctest::Approx(12.0));
  CHECK(grads[1].rows() == 2);
  CHECK(grads[1].cols() == 3);
  for (double v : grads[1].data) CHECK(v == 0.0);
}

TEST_CASE("non-scalar loss is a usage error") {
  Graph g;
  const Var w = g.parameter(Tensor(2, 2, 1.0));
  const std::vector<Var> wrt{w};
  CHECK_THROWS_AS(g.gradients(w * w, wrt), UsageError);
}

TEST_CASE("mlp with bernoulli reconstruction loss matches finite differences") {
  const auto spec = MlpSpec::make({12, 16}, 10, Activation::kRelu);
  Rng rng(11);
  auto p = init_mlp(spec, 8, rng);
  for (std::size_t t = 1; t < p.tensors.size(); t += 2)
    for (auto& b : p.tensors[t].data) b = rng.uniform(-0.3, 0.3);
  const Tensor x = random_tensor(6, 8, rng);
  Tensor target(6, 10);
  for (auto& v : target.data) v = rng.uniform();

  Graph g;
  const auto vars = bind(g, p);
  const Var logits = mlp_forward(spec, vars, g.constant(x));
  const Var t = g.constant(target);
  const Var loss = mean(sum_cols(softplus(logits) - t * logits)) * 1.0;
  CHECK(loss.value().item() == doctest::Approx(bernoulli_nll(logits.value(), target)).epsilon(1e-12));
  const auto analytic = g.gradients(loss, vars);

  std::vector<Tensor*> ptrs;
  for (auto& tensor : p.tensors) ptrs.push_back(&tensor);
  const double err = max_fd_error(ptrs, analytic, [&] { return bernoulli_nll(mlp_apply(spec, p, x), target); });
  CHECK(err < 1e-4);
}

TEST_CASE("elementwise ops, broadcasting and reductions match finite differences") {
  Rng rng(5);
  Tensor a = random_tensor(3, 4, rng, 0.5, 2.0);
  Tensor b = random_tensor(1, 4, rng, 0.5, 2.0);
  Tensor c = random_tensor(3, 1, rng, -1.0, 1.0);
  auto build = [&](Graph& g, Var va, Var vb, Var vc) {
    const Var e1 = log(va) * vb + exp(vc) / (va + 1.0);
    const Var e2 = leaky_relu(va - vb, 0.1) + abs(vc - 0.05) * softplus(va);
    const Var e3 = matmul(transpose(va), square(vc + va * 0.5));
    const Var l1 = logsumexp_cols(e1 + e2);
    const Var l2 = sum_rows(slice_cols(e2, 1, 3));
    (void)g;
    return sum(l1) + mean(l2) + sum(e3) * 0.1;
  };
  auto eval = [&] {
    Graph g;
    return build(g, g.constant(a), g.constant(b), g.constant(c)).value().item();
  };
  Graph g;
  const Var va = g.parameter(a), vb = g.parameter(b), vc = g.parameter(c);
  const std::vector<Var> wrt{va, vb, vc};
  const auto analytic = g.gradients(build(g, va, vb, vc), wrt);
  CHECK(max_fd_error({&a, &b, &c}, analytic, eval) < 1e-4);
}

TEST_CASE("forward and backward passes are bit-reproducible") {
  const auto spec = MlpSpec::make({16, 16}, 5, Activation::kLeakyRelu);
  auto run = [&] {
    Rng rng(99);
    const auto p = init_mlp(spec, 9, rng);
    const Tensor x = random_tensor(8, 9, rng);
    Graph g;
    const auto vars = bind(g, p);
    const Var loss = sum(square(mlp_forward(spec, vars, g.constant(x))));
    auto grads = g.gradients(loss, vars);
    grads.push_back(loss.value());
    return grads;
  };
  const auto first = run();
  const auto second = run();
  REQUIRE(first.size() == second.size());
  for (std::size_t i = 0; i < first.size(); ++i) CHECK(first[i].data == second[i].data);
}

TEST_CASE("gradient of a sum equals the sum of gradients on random graphs") {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    Rng rng(seed);
    const Tensor a = random_tensor(4, 3, rng);
    const Tensor b = random_tensor(3, 2, rng);
    auto f = [](Var x, Var y) { return sum(square(matmul(x, y))); };
    auto h = [](Var x, Var y) { return mean(softplus(matmul(x, y)) * 3.0) + sum(exp(x * 0.3)); };
    auto grads_of = [&](int which) {
      Graph g;
      const Var x = g.parameter(a), y = g.parameter(b);
      Var loss = which == 0 ? f(x, y) : which == 1 ? h(x, y) : f(x, y) + h(x, y);
      const std::vector<Var> wrt{x, y};
      return g.gradients(loss, wrt);
    };
    const auto gf = grads_of(0), gh = grads_of(1), gs = grads_of(2);
    for (std::size_t t = 0; t < 2; ++t)
      for (std::size_t i = 0; i < gs[t].size(); ++i)
        CHECK(std::abs(gs[t].data[i] - (gf[t].data[i] + gh[t].data[i])) <= 1e-12 * (1.0 + std::abs(gs[t].data[i])));
  }
}

TEST_CASE("adam leaves parameters unchanged on a zero gradient") {
  ParameterSet p;
  p.tensors = {Tensor(2, 2, 0.7)};
  AdamState state(AdamConfig{}, p);
  adam_step(p, {Tensor(2, 2, 0.0)}, state);
  for (double v : p.tensors[0].data) CHECK(v == 0.7);
  for (double v : state.first_moment[0].data) CHECK(v == 0.0);
  for (double v : state.second_moment[0].data) CHECK(v == 0.0);
  CHECK(state.step_count == 1);
}

TEST_CASE("first adam step moves by the learning rate") {
  // m_hat = g, v_hat = g^2 -> update lr * g / (|g| + eps).
  ParameterSet p;
  p.tensors = {Tensor::scalar(1.0)};
  AdamState state(AdamConfig{1e-4, 0.9, 0.999, 1e-8}, p);
  adam_step(p, {Tensor::scalar(0.1)}, state);
  CHECK(std::abs((1.0 - p.tensors[0].item()) - 1e-4) < 1e-9);
}

TEST_CASE("second identical adam step again moves by about the learning rate") {
  ParameterSet p;
  p.tensors = {Tensor::scalar(0.0)};
  AdamState state(AdamConfig{1e-4, 0.9, 0.999, 1e-8}, p);
  adam_step(p, {Tensor::scalar(0.5)}, state);
  const double after_first = p.tensors[0].item();
  adam_step(p, {Tensor::scalar(0.5)}, state);
  const double second = after_first - p.tensors[0].item();
  // m_hat = v_hat^0.5 = g exactly for a constant gradient.
  const double m = 0.1 * 0.5 + 0.9 * (0.1 * 0.5), v = 0.001 * 0.25 + 0.999 * (0.001 * 0.25);
  const double expect = 1e-4 * (m / (1 - 0.81)) / (std::sqrt(v / (1 - 0.999 * 0.999)) + 1e-8);
  CHECK(second == doctest::Approx(expect).epsilon(1e-12));
  CHECK(second == doctest::Approx(1e-4).epsilon(1e-6));
  CHECK(state.step_count == 2);
}

TEST_CASE("non-finite gradient aborts the step and leaves state untouched") {
  ParameterSet p;
  p.tensors = {Tensor(1, 2, 1.0)};
  AdamState state(AdamConfig{}, p);
  Tensor g(1, 2, 0.0);
  g.data[1] = std::nan("");
  CHECK_THROWS_AS(adam_step(p, {g}, state), TrainingDiverged);
  CHECK(state.step_count == 0);
  CHECK(p.tensors[0].data[0] == 1.0);
}

TEST_CASE("adam rejects mismatched shapes") {
  ParameterSet p;
  p.tensors = {Tensor(2, 2, 1.0)};
  AdamState state(AdamConfig{}, p);
  CHECK_THROWS_AS(adam_step(p, {Tensor(2, 3, 0.0)}, state), ConfigError);
}
