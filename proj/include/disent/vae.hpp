#pragma once

// Gaussian-encoder / Bernoulli-decoder VAEs and the six regularized
// objectives. Every stochastic quantity (reparameterization noise, shuffles)
// is passed in explicitly so that a loss is a pure function of parameters and
// inputs; the trainer is the only place that draws randomness.

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "disent/autodiff.hpp"
#include "disent/factor_models.hpp"
#include "disent/nn.hpp"
#include "disent/rng.hpp"

namespace disent {

enum class ObjectiveKind { kBetaVae, kAnnealedVae, kFactorVae, kBetaTcVae, kDipVaeI, kDipVaeII };

std::string to_string(ObjectiveKind k);
ObjectiveKind objective_from_string(const std::string& s);
const std::vector<ObjectiveKind>& all_objectives();

/// The six-value sweep grid of each objective's single hyperparameter.
const std::vector<double>& hyperparameter_grid(ObjectiveKind k);

inline constexpr double kAnnealedGamma = 1000.0;
inline constexpr long kPaperAnnealedThreshold = 100000;

struct ObjectiveConfig {
  ObjectiveKind kind = ObjectiveKind::kBetaVae;
  /// beta | c_max | gamma | beta | lambda_od | lambda_od, by kind.
  double value = 1.0;
  /// AnnealedVAE only. 0 means "steps / 3" at training time.
  long annealed_threshold = 0;
  double annealed_gamma = kAnnealedGamma;

  static ObjectiveConfig make(ObjectiveKind kind, double value);

  std::string hyperparameter_name() const;
  /// DIP-VAE diagonal weight: 10 lambda_od for mode I, lambda_od for mode II.
  double lambda_d() const;
  /// Rejects negative values. NaN is let through on purpose: it surfaces as
  /// a diverged run rather than a configuration error.
  void validate() const;
};

struct VaeArchitecture {
  std::size_t latent_dim = 6;
  std::vector<std::size_t> hidden{64, 64};
  std::vector<std::size_t> discriminator_hidden{64, 64};
  double discriminator_slope = 0.02;

  static VaeArchitecture desk() { return {}; }
  /// Latent 10, the 256-unit dense layers of the reference stacks (without
  /// their convolutions) and the 6 x 1000 leaky-ReLU discriminator.
  static VaeArchitecture paper() { return {10, {256, 256}, std::vector<std::size_t>(6, 1000), 0.02}; }
};

struct TrainingConfig {
  long steps = 5000;
  std::size_t batch_size = 32;
  AdamConfig optimizer{1e-4, 0.9, 0.999, 1e-8};
  AdamConfig discriminator_optimizer{1e-4, 0.5, 0.9, 1e-8};
  /// Loss terms are recorded every `trace_every` steps (and at the last step).
  long trace_every = 250;

  static TrainingConfig desk() { return {}; }
  static TrainingConfig paper() {
    TrainingConfig c;
    c.steps = 300000;
    c.batch_size = 64;
    return c;
  }
};

/// Batch of posterior parameters, both (n x D).
struct EncoderOutput {
  Tensor mean;
  Tensor log_variance;
};

class VaeModel {
 public:
  VaeModel() = default;
  static VaeModel create(std::size_t input_width, const VaeArchitecture& arch, Rng& rng);
  /// Reassembles a model from stored parameters (checkpoint loading).
  static VaeModel from_parameters(std::size_t input_width, const VaeArchitecture& arch, ParameterSet encoder,
                                  ParameterSet decoder);

  std::size_t input_width() const { return input_width_; }
  std::size_t latent_dim() const { return arch_.latent_dim; }
  const VaeArchitecture& architecture() const { return arch_; }
  const MlpSpec& encoder_spec() const { return encoder_spec_; }
  const MlpSpec& decoder_spec() const { return decoder_spec_; }
  ParameterSet& encoder() { return encoder_; }
  ParameterSet& decoder() { return decoder_; }
  const ParameterSet& encoder() const { return encoder_; }
  const ParameterSet& decoder() const { return decoder_; }

  EncoderOutput encode(const Tensor& x) const;
  Tensor decode_logits(const Tensor& z) const;

 private:
  std::size_t input_width_ = 0;
  VaeArchitecture arch_;
  MlpSpec encoder_spec_;
  MlpSpec decoder_spec_;
  ParameterSet encoder_;
  ParameterSet decoder_;
};

/// Two-way classifier on latent codes: logit 0 = "joint", logit 1 = "permuted".
struct Discriminator {
  MlpSpec spec;
  ParameterSet params;

  static Discriminator create(std::size_t latent_dim, const VaeArchitecture& arch, Rng& rng);
};

enum class RepresentationMode { kMean, kSampled };

/// z = mu + exp(logvar / 2) * eps.
Tensor reparameterize(const EncoderOutput& enc, const Tensor& eps);
/// Mean mode ignores `rng`; sampled mode requires it.
Tensor representation(const VaeModel& model, const Tensor& x, RepresentationMode mode, Rng* rng = nullptr);

// --- loss terms on a graph ------------------------------------------------------

/// Batch mean of 0.5 * sum_d (mu^2 + exp(logvar) - 1 - logvar).
Var kl_term(Var mean, Var log_variance);
/// Batch mean of the per-pixel Bernoulli negative log-likelihood
/// softplus(l) - x l, summed over pixels.
Var recon_nll(Var logits, Var x);

Var beta_vae_loss(Var recon, Var kl, double beta);

/// C(step) = c_max * min(step / threshold, 1).
double annealed_capacity(long step, double c_max, long threshold);
Var annealed_vae_loss(Var recon, Var kl, long step, double c_max, double gamma, long threshold);

/// Minibatch-weighted-sampling estimate of TC(q(z)) from codes z sampled
/// from q(z | x_m) of the same batch, for a data set of `dataset_size` items.
Var total_correlation_mws(Var z, Var mean, Var log_variance, double dataset_size);
/// recon + kl + (beta - 1) * tc.
Var beta_tcvae_loss(Var recon, Var kl, Var tc, double beta);

enum class DipMode { kI, kII };
/// Biased batch covariance of mu; mode II adds the batch mean of diag(sigma^2).
Var dip_covariance(Var mean, Var log_variance, DipMode mode);
/// lambda_od * sum_{i != j} C_ij^2 + lambda_d * sum_i (C_ii - 1)^2.
Var dip_vae_penalty(Var mean, Var log_variance, DipMode mode, double lambda_od, double lambda_d);

/// Independently permutes every column of z (rows x D).
Tensor shuffle_columns(const Tensor& z, Rng& rng);
/// Density-ratio TC estimate: batch mean of logit_0 - logit_1.
Var density_ratio_tc(Var logits);
/// Cross-entropy with class 0 for joint codes and class 1 for permuted codes,
/// averaged over both halves.
Var discriminator_loss(Var logits_joint, Var logits_permuted);

// --- full objectives ------------------------------------------------------------

struct LossTerms {
  double recon = 0.0;
  double kl = 0.0;
  /// Objective-specific extra term before weighting: |kl - C|, TC estimate,
  /// or DIP penalty (already weighted by its lambdas).
  double regularizer = 0.0;
  double total = 0.0;

  std::map<std::string, double> as_map() const;
};

/// Everything the non-adversarial objectives need beyond parameters and data.
struct ObjectiveContext {
  long step = 0;
  long annealed_threshold = 1;
  double dataset_size = 1.0;
};

struct VaeGraph {
  std::vector<Var> encoder;
  std::vector<Var> decoder;
  Var mean, log_variance, z;
  Var recon, kl, regularizer, total;
};

/// Builds the loss of `config` on `g` for data x and noise eps (n x D).
/// FactorVAE needs a discriminator; it is bound as constants so its weights
/// receive no gradient while z still does.
VaeGraph build_objective(Graph& g, const VaeModel& model, const ObjectiveConfig& config, const Tensor& x,
                         const Tensor& eps, const ObjectiveContext& ctx, const Discriminator* discriminator = nullptr);

/// Loss value and gradients (encoder tensors then decoder tensors).
struct ObjectiveEvaluation {
  LossTerms terms;
  std::vector<Tensor> gradients;
};
ObjectiveEvaluation evaluate_objective(const VaeModel& model, const ObjectiveConfig& config, const Tensor& x,
                                       const Tensor& eps, const ObjectiveContext& ctx,
                                       const Discriminator* discriminator = nullptr);

struct FactorVaeStepResult {
  LossTerms vae_terms;
  double discriminator_loss = 0.0;
  std::vector<Tensor> vae_gradients;  // encoder then decoder
  std::vector<Tensor> discriminator_gradients;
};

/// One FactorVAE evaluation: the VAE loss on (x_vae, eps_vae) and the
/// discriminator loss on codes of an independent batch (x_disc, eps_disc)
/// against their column-shuffled copy. Codes fed to the discriminator loss
/// are detached from the encoder.
FactorVaeStepResult factor_vae_step(const VaeModel& model, const Discriminator& discriminator, double gamma,
                                    const Tensor& x_vae, const Tensor& eps_vae, const Tensor& x_disc,
                                    const Tensor& eps_disc, Rng& shuffle_rng);

// --- training -------------------------------------------------------------------

struct TraceEntry {
  long step = 0;
  LossTerms terms;
};

struct TrainedModel {
  VaeModel vae;
  std::optional<Discriminator> discriminator;
  ObjectiveConfig objective;
  std::string dataset;
  Variant variant = Variant::kNone;
  std::uint64_t seed = 0;
  long steps = 0;
  std::size_t batch_size = 0;
  LossTerms final_terms;
  std::vector<TraceEntry> trace;
};

/// Deterministic in all arguments. Throws TrainingDiverged carrying the step
/// and loss terms as soon as a loss or gradient is non-finite.
TrainedModel train_model(const ObjectiveConfig& objective, const VaeArchitecture& arch,
                         const GroundTruthModel& data, std::uint64_t seed, const TrainingConfig& training);

/// Mean reconstruction NLL of `model` on n fresh draws (seeded).
double mean_recon_nll(const VaeModel& model, const GroundTruthModel& data, std::size_t n, std::uint64_t seed);

/// manifest.json plus params.bin (little-endian f64, tensors in manifest order).
void save_checkpoint(const TrainedModel& model, const std::filesystem::path& dir);
TrainedModel load_checkpoint(const std::filesystem::path& dir);

}  // namespace disent
