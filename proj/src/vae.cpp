#include "disent/vae.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>

#include "disent/errors.hpp"
#include "json.hpp"

namespace disent {

namespace {

struct ObjectiveInfo {
  ObjectiveKind kind;
  const char* name;
  const char* hyperparameter;
  std::vector<double> grid;
};

const std::vector<ObjectiveInfo>& objective_table() {
  static const std::vector<ObjectiveInfo> table = {
      {ObjectiveKind::kBetaVae, "beta_vae", "beta", {1, 2, 4, 6, 8, 16}},
      {ObjectiveKind::kAnnealedVae, "annealed_vae", "c_max", {5, 10, 25, 50, 75, 100}},
      {ObjectiveKind::kFactorVae, "factor_vae", "gamma", {10, 20, 30, 40, 50, 100}},
      {ObjectiveKind::kBetaTcVae, "beta_tcvae", "beta", {1, 2, 4, 6, 8, 10}},
      {ObjectiveKind::kDipVaeI, "dip_vae_i", "lambda_od", {1, 2, 5, 10, 20, 50}},
      {ObjectiveKind::kDipVaeII, "dip_vae_ii", "lambda_od", {1, 2, 5, 10, 20, 50}},
  };
  return table;
}

const ObjectiveInfo& info(ObjectiveKind k) {
  for (const auto& e : objective_table())
    if (e.kind == k) return e;
  throw ConfigError("unknown objective kind");
}

Tensor identity(std::size_t d) {
  Tensor t(d, d);
  for (std::size_t i = 0; i < d; ++i) t(i, i) = 1.0;
  return t;
}

Tensor columns(const Tensor& t, std::size_t begin, std::size_t end) {
  Tensor out(t.rows(), end - begin);
  for (std::size_t r = 0; r < t.rows(); ++r)
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = t(r, c);
  return out;
}

Tensor standard_normal(std::size_t rows, std::size_t cols, Rng& rng) {
  Tensor t(rows, cols);
  for (double& v : t.data) v = rng.normal();
  return t;
}

}  // namespace

std::string to_string(ObjectiveKind k) { return info(k).name; }

ObjectiveKind objective_from_string(const std::string& s) {
  for (const auto& e : objective_table())
    if (s == e.name) return e.kind;
  throw ConfigError("unknown objective '" + s + "'");
}

const std::vector<ObjectiveKind>& all_objectives() {
  static const std::vector<ObjectiveKind> kinds = [] {
    std::vector<ObjectiveKind> v;
    for (const auto& e : objective_table()) v.push_back(e.kind);
    return v;
  }();
  return kinds;
}

const std::vector<double>& hyperparameter_grid(ObjectiveKind k) { return info(k).grid; }

ObjectiveConfig ObjectiveConfig::make(ObjectiveKind kind, double value) {
  ObjectiveConfig c;
  c.kind = kind;
  c.value = value;
  return c;
}

std::string ObjectiveConfig::hyperparameter_name() const { return info(kind).hyperparameter; }

double ObjectiveConfig::lambda_d() const {
  if (kind == ObjectiveKind::kDipVaeI) return 10.0 * value;
  if (kind == ObjectiveKind::kDipVaeII) return value;
  throw UsageError("lambda_d is only defined for DIP-VAE objectives");
}

void ObjectiveConfig::validate() const {
  if (value < 0.0) throw ConfigError(hyperparameter_name() + " must be non-negative");
  if (annealed_threshold < 0) throw ConfigError("annealed threshold must be non-negative");
  if (annealed_gamma < 0.0) throw ConfigError("annealed gamma must be non-negative");
}

std::map<std::string, double> LossTerms::as_map() const {
  return {{"recon", recon}, {"kl", kl}, {"regularizer", regularizer}, {"total", total}};
}

// --- models -----------------------------------------------------------------------

VaeModel VaeModel::create(std::size_t input_width, const VaeArchitecture& arch, Rng& rng) {
  if (arch.latent_dim == 0) throw ConfigError("latent dimension must be positive");
  VaeModel m;
  m.input_width_ = input_width;
  m.arch_ = arch;
  m.encoder_spec_ = MlpSpec::make(arch.hidden, 2 * arch.latent_dim, Activation::kRelu);
  m.decoder_spec_ = MlpSpec::make(arch.hidden, input_width, Activation::kRelu);
  m.encoder_ = init_mlp(m.encoder_spec_, input_width, rng);
  m.decoder_ = init_mlp(m.decoder_spec_, arch.latent_dim, rng);
  return m;
}

VaeModel VaeModel::from_parameters(std::size_t input_width, const VaeArchitecture& arch, ParameterSet encoder,
                                   ParameterSet decoder) {
  VaeModel m;
  m.input_width_ = input_width;
  m.arch_ = arch;
  m.encoder_spec_ = MlpSpec::make(arch.hidden, 2 * arch.latent_dim, Activation::kRelu);
  m.decoder_spec_ = MlpSpec::make(arch.hidden, input_width, Activation::kRelu);
  const std::size_t layers = arch.hidden.size() + 1;
  if (encoder.tensors.size() != 2 * layers || decoder.tensors.size() != 2 * layers)
    throw ConfigError("stored parameters do not match the architecture");
  m.encoder_ = std::move(encoder);
  m.decoder_ = std::move(decoder);
  // Shape validation happens on the first forward pass; check the ends here.
  if (m.encoder_.tensors.front().rows() != input_width || m.decoder_.tensors.front().rows() != arch.latent_dim)
    throw ConfigError("stored parameter shapes do not match the architecture");
  return m;
}

EncoderOutput VaeModel::encode(const Tensor& x) const {
  const Tensor out = mlp_apply(encoder_spec_, encoder_, x);
  const std::size_t d = arch_.latent_dim;
  return {columns(out, 0, d), columns(out, d, 2 * d)};
}

Tensor VaeModel::decode_logits(const Tensor& z) const { return mlp_apply(decoder_spec_, decoder_, z); }

Discriminator Discriminator::create(std::size_t latent_dim, const VaeArchitecture& arch, Rng& rng) {
  Discriminator d;
  d.spec = MlpSpec::make(arch.discriminator_hidden, 2, Activation::kLeakyRelu, arch.discriminator_slope);
  d.params = init_mlp(d.spec, latent_dim, rng);
  return d;
}

Tensor reparameterize(const EncoderOutput& enc, const Tensor& eps) {
  if (!eps.same_shape(enc.mean)) throw ConfigError("noise shape does not match the posterior");
  Tensor z = enc.mean;
  for (std::size_t i = 0; i < z.size(); ++i) z.data[i] += std::exp(0.5 * enc.log_variance.data[i]) * eps.data[i];
  return z;
}

Tensor representation(const VaeModel& model, const Tensor& x, RepresentationMode mode, Rng* rng) {
  EncoderOutput enc = model.encode(x);
  if (mode == RepresentationMode::kMean) return std::move(enc.mean);
  if (rng == nullptr) throw UsageError("sampled representation requires a random stream");
  return reparameterize(enc, standard_normal(enc.mean.rows(), enc.mean.cols(), *rng));
}

// --- loss terms -------------------------------------------------------------------

Var kl_term(Var mean, Var log_variance) {
  const double n = static_cast<double>(mean.rows());
  Var per_entry = shift(square(mean) + exp(log_variance) - log_variance, -1.0);
  return scale(sum(per_entry), 0.5 / n);
}

Var recon_nll(Var logits, Var x) {
  const double n = static_cast<double>(logits.rows());
  return scale(sum(softplus(logits) - x * logits), 1.0 / n);
}

Var beta_vae_loss(Var recon, Var kl, double beta) { return recon + beta * kl; }

double annealed_capacity(long step, double c_max, long threshold) {
  if (threshold <= 0) throw ConfigError("annealing threshold must be positive");
  if (step < 0) throw ConfigError("step must be non-negative");
  return c_max * std::min(static_cast<double>(step) / static_cast<double>(threshold), 1.0);
}

Var annealed_vae_loss(Var recon, Var kl, long step, double c_max, double gamma, long threshold) {
  const double c = annealed_capacity(step, c_max, threshold);
  return recon + gamma * abs(shift(kl, -c));
}

Var total_correlation_mws(Var z, Var mean, Var log_variance, double dataset_size) {
  const std::size_t m = z.rows();
  const std::size_t d = z.cols();
  if (m < 2) throw UsageError("total correlation estimate needs a batch of at least 2");
  if (!(dataset_size >= 1.0)) throw ConfigError("dataset size must be at least 1");
  const double log_norm = std::log(dataset_size * static_cast<double>(m));
  const double log_two_pi = std::log(2.0 * std::numbers::pi);

  // log q(z_i,k | x_j) as an (i, j) matrix per dimension k.
  std::vector<Var> per_dim;
  for (std::size_t k = 0; k < d; ++k) {
    Var zc = slice_cols(z, k, k + 1);
    Var mu_row = transpose(slice_cols(mean, k, k + 1));
    Var lv_row = transpose(slice_cols(log_variance, k, k + 1));
    Var sq = square(zc - mu_row) * exp(neg(lv_row));
    per_dim.push_back(scale(shift(lv_row + sq, log_two_pi), -0.5));
  }
  Var joint = per_dim[0];
  for (std::size_t k = 1; k < d; ++k) joint = joint + per_dim[k];
  Var log_qz = shift(logsumexp_cols(joint), -log_norm);
  Var log_marginals = shift(logsumexp_cols(per_dim[0]), -log_norm);
  for (std::size_t k = 1; k < d; ++k) log_marginals = log_marginals + shift(logsumexp_cols(per_dim[k]), -log_norm);
  return disent::mean(log_qz - log_marginals);
}

Var beta_tcvae_loss(Var recon, Var kl, Var tc, double beta) { return recon + kl + (beta - 1.0) * tc; }

Var dip_covariance(Var mean, Var log_variance, DipMode mode) {
  const std::size_t n = mean.rows();
  if (n < 2) throw UsageError("DIP-VAE covariance needs a batch of at least 2");
  const double inv_n = 1.0 / static_cast<double>(n);
  Var centered = mean - scale(sum_rows(mean), inv_n);
  Var cov = scale(matmul(transpose(centered), centered), inv_n);
  if (mode == DipMode::kII) {
    Graph& g = *mean.graph;
    Var eye = g.constant(identity(mean.cols()));
    cov = cov + eye * scale(sum_rows(exp(log_variance)), inv_n);
  }
  return cov;
}

Var dip_vae_penalty(Var mean, Var log_variance, DipMode mode, double lambda_od, double lambda_d) {
  Var cov = dip_covariance(mean, log_variance, mode);
  Graph& g = *mean.graph;
  const std::size_t d = mean.cols();
  const Tensor eye_t = identity(d);
  Tensor off_mask(d, d, 1.0);
  for (std::size_t i = 0; i < d; ++i) off_mask(i, i) = 0.0;
  Var eye = g.constant(eye_t);
  Var off = cov * g.constant(off_mask);
  Var diag_dev = (cov - eye) * eye;
  return lambda_od * sum(square(off)) + lambda_d * sum(square(diag_dev));
}

Tensor shuffle_columns(const Tensor& z, Rng& rng) {
  Tensor out(z.rows(), z.cols());
  std::vector<std::size_t> perm(z.rows());
  for (std::size_t c = 0; c < z.cols(); ++c) {
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng.engine());
    for (std::size_t r = 0; r < z.rows(); ++r) out(r, c) = z(perm[r], c);
  }
  return out;
}

Var density_ratio_tc(Var logits) {
  if (logits.cols() != 2) throw ConfigError("discriminator must emit two logits");
  return mean(slice_cols(logits, 0, 1) - slice_cols(logits, 1, 2));
}

Var discriminator_loss(Var logits_joint, Var logits_permuted) {
  Var ce_joint = mean(logsumexp_cols(logits_joint) - slice_cols(logits_joint, 0, 1));
  Var ce_perm = mean(logsumexp_cols(logits_permuted) - slice_cols(logits_permuted, 1, 2));
  return scale(ce_joint + ce_perm, 0.5);
}

// --- objectives -------------------------------------------------------------------

VaeGraph build_objective(Graph& g, const VaeModel& model, const ObjectiveConfig& config, const Tensor& x,
                         const Tensor& eps, const ObjectiveContext& ctx, const Discriminator* discriminator) {
  const std::size_t d = model.latent_dim();
  if (eps.rows() != x.rows() || eps.cols() != d) throw ConfigError("noise must be (batch x latent_dim)");
  VaeGraph vg;
  vg.encoder = bind(g, model.encoder());
  vg.decoder = bind(g, model.decoder());
  Var xv = g.constant(x);
  Var enc = mlp_forward(model.encoder_spec(), vg.encoder, xv);
  vg.mean = slice_cols(enc, 0, d);
  vg.log_variance = slice_cols(enc, d, 2 * d);
  vg.z = vg.mean + exp(scale(vg.log_variance, 0.5)) * g.constant(eps);
  Var logits = mlp_forward(model.decoder_spec(), vg.decoder, vg.z);
  vg.recon = recon_nll(logits, xv);
  vg.kl = kl_term(vg.mean, vg.log_variance);

  switch (config.kind) {
    case ObjectiveKind::kBetaVae:
      vg.regularizer = g.constant(Tensor::scalar(0.0));
      vg.total = beta_vae_loss(vg.recon, vg.kl, config.value);
      break;
    case ObjectiveKind::kAnnealedVae: {
      const double c = annealed_capacity(ctx.step, config.value, ctx.annealed_threshold);
      vg.regularizer = abs(shift(vg.kl, -c));
      vg.total = annealed_vae_loss(vg.recon, vg.kl, ctx.step, config.value, config.annealed_gamma,
                                   ctx.annealed_threshold);
      break;
    }
    case ObjectiveKind::kFactorVae: {
      if (discriminator == nullptr) throw ConfigError("FactorVAE objective needs a discriminator");
      if (x.rows() < 2) throw UsageError("FactorVAE needs a batch of at least 2");
      const auto disc = bind(g, discriminator->params, false);
      vg.regularizer = density_ratio_tc(mlp_forward(discriminator->spec, disc, vg.z));
      vg.total = vg.recon + vg.kl + config.value * vg.regularizer;
      break;
    }
    case ObjectiveKind::kBetaTcVae:
      vg.regularizer = total_correlation_mws(vg.z, vg.mean, vg.log_variance, ctx.dataset_size);
      vg.total = beta_tcvae_loss(vg.recon, vg.kl, vg.regularizer, config.value);
      break;
    case ObjectiveKind::kDipVaeI:
    case ObjectiveKind::kDipVaeII: {
      const DipMode mode = config.kind == ObjectiveKind::kDipVaeI ? DipMode::kI : DipMode::kII;
      vg.regularizer = dip_vae_penalty(vg.mean, vg.log_variance, mode, config.value, config.lambda_d());
      vg.total = vg.recon + vg.kl + vg.regularizer;
      break;
    }
  }
  return vg;
}

namespace {

LossTerms read_terms(const VaeGraph& vg) {
  return {vg.recon.value().item(), vg.kl.value().item(), vg.regularizer.value().item(), vg.total.value().item()};
}

std::vector<Var> concat(const std::vector<Var>& a, const std::vector<Var>& b) {
  std::vector<Var> out(a);
  out.insert(out.end(), b.begin(), b.end());
  return out;
}

}  // namespace

ObjectiveEvaluation evaluate_objective(const VaeModel& model, const ObjectiveConfig& config, const Tensor& x,
                                       const Tensor& eps, const ObjectiveContext& ctx,
                                       const Discriminator* discriminator) {
  Graph g;
  const VaeGraph vg = build_objective(g, model, config, x, eps, ctx, discriminator);
  ObjectiveEvaluation ev;
  ev.terms = read_terms(vg);
  const auto wrt = concat(vg.encoder, vg.decoder);
  ev.gradients = g.gradients(vg.total, wrt);
  return ev;
}

FactorVaeStepResult factor_vae_step(const VaeModel& model, const Discriminator& discriminator, double gamma,
                                    const Tensor& x_vae, const Tensor& eps_vae, const Tensor& x_disc,
                                    const Tensor& eps_disc, Rng& shuffle_rng) {
  if (x_vae.rows() < 2 || x_disc.rows() < 2) throw UsageError("FactorVAE needs a batch of at least 2");
  FactorVaeStepResult r;
  const ObjectiveEvaluation ev =
      evaluate_objective(model, ObjectiveConfig::make(ObjectiveKind::kFactorVae, gamma), x_vae, eps_vae, {},
                         &discriminator);
  r.vae_terms = ev.terms;
  r.vae_gradients = ev.gradients;

  const Tensor z = reparameterize(model.encode(x_disc), eps_disc);
  const Tensor z_perm = shuffle_columns(z, shuffle_rng);
  Graph g;
  const auto params = bind(g, discriminator.params);
  Var joint = mlp_forward(discriminator.spec, params, g.constant(z));
  Var perm = mlp_forward(discriminator.spec, params, g.constant(z_perm));
  Var loss = discriminator_loss(joint, perm);
  r.discriminator_loss = loss.value().item();
  r.discriminator_gradients = g.gradients(loss, params);
  return r;
}

// --- training ---------------------------------------------------------------------

namespace {

Tensor draw_batch(const GroundTruthModel& data, std::size_t n, Rng& rng) {
  return to_tensor(data.render_batch(data.sample_factors(n, rng), rng));
}

bool finite(const LossTerms& t) {
  return std::isfinite(t.recon) && std::isfinite(t.kl) && std::isfinite(t.regularizer) && std::isfinite(t.total);
}

void split_step(VaeModel& vae, const std::vector<Tensor>& grads, AdamState& enc_state, AdamState& dec_state) {
  const std::size_t ne = vae.encoder().tensors.size();
  std::vector<Tensor> ge(grads.begin(), grads.begin() + static_cast<std::ptrdiff_t>(ne));
  std::vector<Tensor> gd(grads.begin() + static_cast<std::ptrdiff_t>(ne), grads.end());
  adam_step(vae.encoder(), ge, enc_state);
  adam_step(vae.decoder(), gd, dec_state);
}

}  // namespace

TrainedModel train_model(const ObjectiveConfig& objective, const VaeArchitecture& arch,
                         const GroundTruthModel& data, std::uint64_t seed, const TrainingConfig& training) {
  objective.validate();
  if (training.steps < 0) throw ConfigError("steps must be non-negative");
  if (training.batch_size == 0) throw ConfigError("batch size must be positive");
  if (training.trace_every <= 0) throw ConfigError("trace interval must be positive");

  const Rng root(seed);
  Rng init_rng = root.split(0);
  Rng data_rng = root.split(1);
  Rng noise_rng = root.split(2);
  Rng disc_init_rng = root.split(3);
  Rng shuffle_rng = root.split(4);

  TrainedModel out;
  out.objective = objective;
  out.dataset = data.name();
  out.variant = data.variant();
  out.seed = seed;
  out.batch_size = training.batch_size;
  out.vae = VaeModel::create(data.pixel_count(), arch, init_rng);
  const bool adversarial = objective.kind == ObjectiveKind::kFactorVae;
  if (adversarial) out.discriminator = Discriminator::create(arch.latent_dim, arch, disc_init_rng);

  ObjectiveContext ctx;
  ctx.annealed_threshold =
      objective.annealed_threshold > 0 ? objective.annealed_threshold : std::max<long>(1, training.steps / 3);
  out.objective.annealed_threshold = ctx.annealed_threshold;
  ctx.dataset_size = static_cast<double>(data.factor_space().grid_size());

  AdamState enc_state(training.optimizer, out.vae.encoder());
  AdamState dec_state(training.optimizer, out.vae.decoder());
  AdamState disc_state;
  if (adversarial) disc_state = AdamState(training.discriminator_optimizer, out.discriminator->params);

  const std::size_t b = training.batch_size;
  const std::size_t d = arch.latent_dim;
  for (long step = 0; step < training.steps; ++step) {
    ctx.step = step;
    LossTerms terms;
    try {
      const Tensor x = draw_batch(data, b, data_rng);
      const Tensor eps = standard_normal(b, d, noise_rng);
      if (adversarial) {
        const Tensor x2 = draw_batch(data, b, data_rng);
        const Tensor eps2 = standard_normal(b, d, noise_rng);
        const FactorVaeStepResult r =
            factor_vae_step(out.vae, *out.discriminator, objective.value, x, eps, x2, eps2, shuffle_rng);
        terms = r.vae_terms;
        if (!finite(terms) || !std::isfinite(r.discriminator_loss)) {
          auto m = terms.as_map();
          m["discriminator"] = r.discriminator_loss;
          throw TrainingDiverged("non-finite loss at step " + std::to_string(step), step, m);
        }
        split_step(out.vae, r.vae_gradients, enc_state, dec_state);
        adam_step(out.discriminator->params, r.discriminator_gradients, disc_state);
      } else {
        const ObjectiveEvaluation ev = evaluate_objective(out.vae, objective, x, eps, ctx);
        terms = ev.terms;
        if (!finite(terms))
          throw TrainingDiverged("non-finite loss at step " + std::to_string(step), step, terms.as_map());
        split_step(out.vae, ev.gradients, enc_state, dec_state);
      }
    } catch (const TrainingDiverged& e) {
      if (e.step() == step && !e.terms().empty()) throw;
      throw TrainingDiverged(std::string(e.what()) + " at step " + std::to_string(step), step, terms.as_map());
    }
    out.final_terms = terms;
    out.steps = step + 1;
    if (step % training.trace_every == 0 || step + 1 == training.steps) out.trace.push_back({step, terms});
  }
  return out;
}

double mean_recon_nll(const VaeModel& model, const GroundTruthModel& data, std::size_t n, std::uint64_t seed) {
  if (n == 0) throw InputError("need at least one sample");
  Rng rng(seed);
  Rng noise = rng.split(1);
  const std::size_t chunk = 512;
  double total = 0.0;
  for (std::size_t start = 0; start < n; start += chunk) {
    const std::size_t m = std::min(chunk, n - start);
    const Tensor x = draw_batch(data, m, rng);
    const Tensor z = reparameterize(model.encode(x), standard_normal(m, model.latent_dim(), noise));
    Graph g;
    Var loss = recon_nll(g.constant(model.decode_logits(z)), g.constant(x));
    total += loss.value().item() * static_cast<double>(m);
  }
  return total / static_cast<double>(n);
}

// --- checkpoints ------------------------------------------------------------------

namespace {

constexpr int kCheckpointVersion = 1;

void write_f64(std::ofstream& os, double v) {
  const auto bits = std::bit_cast<std::uint64_t>(v);
  char bytes[8];
  for (int i = 0; i < 8; ++i) bytes[i] = static_cast<char>((bits >> (8 * i)) & 0xFF);
  os.write(bytes, 8);
}

double read_f64(const char* p) {
  std::uint64_t bits = 0;
  for (int i = 0; i < 8; ++i) bits |= static_cast<std::uint64_t>(static_cast<unsigned char>(p[i])) << (8 * i);
  return std::bit_cast<double>(bits);
}

nlohmann::json terms_json(const LossTerms& t) {
  return {{"recon", t.recon}, {"kl", t.kl}, {"regularizer", t.regularizer}, {"total", t.total}};
}

LossTerms terms_from_json(const nlohmann::json& j) {
  auto get = [&](const char* k) { return j.at(k).is_null() ? std::nan("") : j.at(k).get<double>(); };
  return {get("recon"), get("kl"), get("regularizer"), get("total")};
}

}  // namespace

void save_checkpoint(const TrainedModel& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  struct Group {
    const char* name;
    const ParameterSet* params;
  };
  std::vector<Group> groups = {{"encoder", &model.vae.encoder()}, {"decoder", &model.vae.decoder()}};
  if (model.discriminator) groups.push_back({"discriminator", &model.discriminator->params});

  nlohmann::json tensors = nlohmann::json::array();
  std::ofstream blob(dir / "params.bin", std::ios::binary);
  if (!blob) throw InputError("cannot write " + (dir / "params.bin").string());
  std::size_t offset = 0;
  for (const auto& grp : groups) {
    for (std::size_t i = 0; i < grp.params->tensors.size(); ++i) {
      const Tensor& t = grp.params->tensors[i];
      tensors.push_back({{"name", std::string(grp.name) + "." + std::to_string(i / 2) + (i % 2 ? ".bias" : ".weight")},
                         {"group", grp.name},
                         {"shape", {t.rows(), t.cols()}},
                         {"offset", offset}});
      for (double v : t.data) write_f64(blob, v);
      offset += t.size();
    }
  }
  const auto& arch = model.vae.architecture();
  nlohmann::json trace = nlohmann::json::array();
  for (const auto& e : model.trace) trace.push_back({{"step", e.step}, {"terms", terms_json(e.terms)}});
  nlohmann::json manifest = {
      {"format", "disent-checkpoint"},
      {"version", kCheckpointVersion},
      {"dtype", "f64"},
      {"byte_order", "little"},
      {"scalar_count", offset},
      {"objective",
       {{"kind", to_string(model.objective.kind)},
        {"hyperparameter", model.objective.hyperparameter_name()},
        {"value", model.objective.value},
        {"annealed_threshold", model.objective.annealed_threshold},
        {"annealed_gamma", model.objective.annealed_gamma}}},
      {"dataset", model.dataset},
      {"variant", to_string(model.variant)},
      {"seed", model.seed},
      {"steps", model.steps},
      {"batch_size", model.batch_size},
      {"input_width", model.vae.input_width()},
      {"architecture",
       {{"latent_dim", arch.latent_dim},
        {"hidden", arch.hidden},
        {"discriminator_hidden", arch.discriminator_hidden},
        {"discriminator_slope", arch.discriminator_slope}}},
      {"final_terms", terms_json(model.final_terms)},
      {"trace", trace},
      {"tensors", tensors},
  };
  std::ofstream(dir / "manifest.json") << manifest.dump(2) << '\n';
}

TrainedModel load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream mf(dir / "manifest.json");
  if (!mf) throw InputError("missing " + (dir / "manifest.json").string());
  nlohmann::json manifest;
  try {
    manifest = nlohmann::json::parse(mf);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("checkpoint manifest: ") + e.what(), 0);
  }
  try {
    if (manifest.at("format") != "disent-checkpoint" || manifest.at("version") != kCheckpointVersion)
      throw ParseError("unsupported checkpoint format", 0);
    std::ifstream bf(dir / "params.bin", std::ios::binary);
    if (!bf) throw InputError("missing " + (dir / "params.bin").string());
    const std::string blob((std::istreambuf_iterator<char>(bf)), std::istreambuf_iterator<char>());
    const auto scalars = manifest.at("scalar_count").get<std::size_t>();
    if (blob.size() != scalars * sizeof(double)) throw ParseError("parameter blob size does not match manifest", 0);

    ParameterSet enc, dec, disc;
    for (const auto& t : manifest.at("tensors")) {
      const auto shape = t.at("shape").get<std::vector<std::size_t>>();
      const auto offset = t.at("offset").get<std::size_t>();
      if (shape.size() != 2 || offset + shape[0] * shape[1] > scalars) throw ParseError("bad tensor entry", 0);
      Tensor tensor(shape[0], shape[1]);
      for (std::size_t i = 0; i < tensor.size(); ++i)
        tensor.data[i] = read_f64(blob.data() + (offset + i) * sizeof(double));
      const auto group = t.at("group").get<std::string>();
      (group == "encoder" ? enc : group == "decoder" ? dec : disc).tensors.push_back(std::move(tensor));
    }
    const auto& a = manifest.at("architecture");
    VaeArchitecture arch;
    arch.latent_dim = a.at("latent_dim").get<std::size_t>();
    arch.hidden = a.at("hidden").get<std::vector<std::size_t>>();
    arch.discriminator_hidden = a.at("discriminator_hidden").get<std::vector<std::size_t>>();
    arch.discriminator_slope = a.at("discriminator_slope").get<double>();

    TrainedModel m;
    m.vae = VaeModel::from_parameters(manifest.at("input_width").get<std::size_t>(), arch, std::move(enc),
                                      std::move(dec));
    if (!disc.tensors.empty()) {
      Discriminator d;
      d.spec = MlpSpec::make(arch.discriminator_hidden, 2, Activation::kLeakyRelu, arch.discriminator_slope);
      d.params = std::move(disc);
      m.discriminator = std::move(d);
    }
    const auto& o = manifest.at("objective");
    m.objective.kind = objective_from_string(o.at("kind").get<std::string>());
    m.objective.value = o.at("value").is_null() ? std::nan("") : o.at("value").get<double>();
    m.objective.annealed_threshold = o.at("annealed_threshold").get<long>();
    m.objective.annealed_gamma = o.at("annealed_gamma").get<double>();
    m.dataset = manifest.at("dataset").get<std::string>();
    m.variant = variant_from_string(manifest.at("variant").get<std::string>());
    m.seed = manifest.at("seed").get<std::uint64_t>();
    m.steps = manifest.at("steps").get<long>();
    m.batch_size = manifest.at("batch_size").get<std::size_t>();
    m.final_terms = terms_from_json(manifest.at("final_terms"));
    for (const auto& e : manifest.at("trace"))
      m.trace.push_back({e.at("step").get<long>(), terms_from_json(e.at("terms"))});
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ParseError(std::string("checkpoint manifest: ") + e.what(), 0);
  }
}

}  // namespace disent
