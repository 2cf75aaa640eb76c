#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "disent/autodiff.hpp"
#include "disent/rng.hpp"

namespace disent {

enum class Activation { kIdentity, kRelu, kLeakyRelu };

struct LayerSpec {
  std::size_t width = 0;
  Activation activation = Activation::kIdentity;
  double leaky_slope = 0.02;
};

/// Dense feed-forward stack. `layers[i].width` is the output width of layer i;
/// the input width is fixed when parameters are created.
struct MlpSpec {
  std::vector<LayerSpec> layers;

  /// Hidden layers share `hidden_activation`; the last layer is linear.
  static MlpSpec make(const std::vector<std::size_t>& hidden, std::size_t out,
                      Activation hidden_activation, double leaky_slope = 0.02);
  std::size_t output_width() const;
  void validate() const;
};

/// Flat parameter list: for layer i, tensors[2i] is the (in x out) weight,
/// tensors[2i+1] the (1 x out) bias.
struct ParameterSet {
  std::vector<Tensor> tensors;

  std::size_t scalar_count() const;
  void append(const ParameterSet& other);
};

/// Glorot-uniform weights in +-sqrt(6/(fan_in+fan_out)), zero biases.
ParameterSet init_mlp(const MlpSpec& spec, std::size_t input_width, Rng& rng);

/// Registers every tensor of `params` on `g` as a parameter leaf (or as a
/// constant when `trainable` is false).
std::vector<Var> bind(Graph& g, const ParameterSet& params, bool trainable = true);

/// Forward pass on a graph. `params` must come from `bind`.
Var mlp_forward(const MlpSpec& spec, std::span<const Var> params, Var input);

/// Forward pass without recording gradients.
Tensor mlp_apply(const MlpSpec& spec, const ParameterSet& params, const Tensor& input);

struct AdamConfig {
  double learning_rate = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

struct AdamState {
  AdamConfig config;
  std::vector<Tensor> first_moment;
  std::vector<Tensor> second_moment;
  std::int64_t step_count = 0;

  AdamState() = default;
  AdamState(AdamConfig cfg, const ParameterSet& params);
};

/// One bias-corrected Adam update. Throws TrainingDiverged on a non-finite
/// gradient; parameters and state are left untouched in that case.
void adam_step(ParameterSet& params, const std::vector<Tensor>& grads, AdamState& state);

std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

}  // namespace disent
