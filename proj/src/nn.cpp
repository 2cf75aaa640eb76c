#include "disent/nn.hpp"

#include <cmath>

#include "disent/errors.hpp"

namespace disent {

MlpSpec MlpSpec::make(const std::vector<std::size_t>& hidden, std::size_t out,
                      Activation hidden_activation, double leaky_slope) {
  MlpSpec spec;
  for (std::size_t w : hidden) spec.layers.push_back({w, hidden_activation, leaky_slope});
  spec.layers.push_back({out, Activation::kIdentity, leaky_slope});
  return spec;
}

std::size_t MlpSpec::output_width() const {
  validate();
  return layers.back().width;
}

void MlpSpec::validate() const {
  if (layers.empty()) throw ConfigError("MLP needs at least one layer");
  for (const auto& l : layers)
    if (l.width == 0) throw ConfigError("MLP layer width must be positive");
}

std::size_t ParameterSet::scalar_count() const {
  std::size_t n = 0;
  for (const auto& t : tensors) n += t.size();
  return n;
}

void ParameterSet::append(const ParameterSet& other) {
  tensors.insert(tensors.end(), other.tensors.begin(), other.tensors.end());
}

ParameterSet init_mlp(const MlpSpec& spec, std::size_t input_width, Rng& rng) {
  spec.validate();
  if (input_width == 0) throw ConfigError("MLP input width must be positive");
  ParameterSet p;
  std::size_t in = input_width;
  for (const auto& layer : spec.layers) {
    const double limit = std::sqrt(6.0 / static_cast<double>(in + layer.width));
    Tensor w(in, layer.width);
    for (double& v : w.data) v = rng.uniform(-limit, limit);
    p.tensors.push_back(std::move(w));
    p.tensors.emplace_back(1, layer.width, 0.0);
    in = layer.width;
  }
  return p;
}

std::vector<Var> bind(Graph& g, const ParameterSet& params, bool trainable) {
  std::vector<Var> vars;
  vars.reserve(params.tensors.size());
  for (const auto& t : params.tensors) vars.push_back(trainable ? g.parameter(t) : g.constant(t));
  return vars;
}

Var mlp_forward(const MlpSpec& spec, std::span<const Var> params, Var input) {
  spec.validate();
  if (params.size() != 2 * spec.layers.size())
    throw ConfigError("parameter count does not match MLP spec");
  Var h = input;
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Var w = params[2 * i];
    const Var b = params[2 * i + 1];
    if (h.cols() != w.rows()) {
      throw ConfigError("MLP layer " + std::to_string(i) + " expects input width " +
                        std::to_string(w.rows()) + ", got " + std::to_string(h.cols()));
    }
    if (w.cols() != spec.layers[i].width || b.cols() != spec.layers[i].width)
      throw ConfigError("MLP layer " + std::to_string(i) + " parameters do not match its width");
    h = matmul(h, w) + b;
    switch (spec.layers[i].activation) {
      case Activation::kIdentity: break;
      case Activation::kRelu: h = relu(h); break;
      case Activation::kLeakyRelu: h = leaky_relu(h, spec.layers[i].leaky_slope); break;
    }
  }
  return h;
}

Tensor mlp_apply(const MlpSpec& spec, const ParameterSet& params, const Tensor& input) {
  Graph g;
  auto vars = bind(g, params, false);
  return mlp_forward(spec, vars, g.constant(input)).value();
}

AdamState::AdamState(AdamConfig cfg, const ParameterSet& params) : config(cfg) {
  for (const auto& t : params.tensors) {
    first_moment.emplace_back(t.rows(), t.cols(), 0.0);
    second_moment.emplace_back(t.rows(), t.cols(), 0.0);
  }
}

void adam_step(ParameterSet& params, const std::vector<Tensor>& grads, AdamState& state) {
  if (grads.size() != params.tensors.size() || state.first_moment.size() != params.tensors.size())
    throw ConfigError("adam_step: parameter, gradient and state counts differ");
  for (std::size_t i = 0; i < grads.size(); ++i) {
    if (!grads[i].same_shape(params.tensors[i]) || !state.first_moment[i].same_shape(grads[i]))
      throw ConfigError("adam_step: shape mismatch at tensor " + std::to_string(i));
    if (!grads[i].all_finite()) {
      throw TrainingDiverged("non-finite gradient in parameter tensor " + std::to_string(i),
                             static_cast<long>(state.step_count));
    }
  }
  const AdamConfig& c = state.config;
  state.step_count += 1;
  const double t = static_cast<double>(state.step_count);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < grads.size(); ++i) {
    auto& p = params.tensors[i].data;
    auto& m = state.first_moment[i].data;
    auto& v = state.second_moment[i].data;
    const auto& g = grads[i].data;
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g[j];
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g[j] * g[j];
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      p[j] -= c.learning_rate * mhat / (std::sqrt(vhat) + c.epsilon);
    }
  }
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kIdentity: return "identity";
    case Activation::kRelu: return "relu";
    case Activation::kLeakyRelu: return "leaky_relu";
  }
  return "identity";
}

Activation activation_from_string(const std::string& s) {
  if (s == "identity") return Activation::kIdentity;
  if (s == "relu") return Activation::kRelu;
  if (s == "leaky_relu") return Activation::kLeakyRelu;
  throw ConfigError("unknown activation '" + s + "'");
}

}  // namespace disent
