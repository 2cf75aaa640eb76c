#include "disent/harness.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <exception>
#include <fstream>
#include <mutex>
#include <set>
#include <sstream>
#include <thread>

#include "disent/errors.hpp"

namespace disent {

using nlohmann::json;

namespace {

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

json optional_to_json(const std::optional<double>& v) {
  return v && std::isfinite(*v) ? json(*v) : json(nullptr);
}

double parse_double(const json& j, const std::string& what) {
  if (j.is_null()) return std::nan("");
  if (j.is_number()) return j.get<double>();
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    char* end = nullptr;
    const double v = std::strtod(s.c_str(), &end);
    if (end != s.c_str() && *end == '\0') return v;
  }
  throw ConfigError(what + ": expected a number");
}

std::string lower(std::string s) {
  for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return s;
}

DatasetSpec parse_dataset(const json& j) {
  DatasetSpec d;
  if (j.is_string()) {
    const auto s = j.get<std::string>();
    const auto slash = s.find('/');
    d.name = s.substr(0, slash);
    if (slash != std::string::npos) d.variant = variant_from_string(s.substr(slash + 1));
  } else if (j.is_object()) {
    for (const auto& [k, v] : j.items())
      if (k != "name" && k != "variant") throw ConfigError("dataset: unknown key '" + k + "'");
    d.name = j.value("name", d.name);
    if (j.contains("variant")) d.variant = variant_from_string(j.at("variant").get<std::string>());
  } else {
    throw ConfigError("dataset: expected a string or an object");
  }
  return d;
}

template <class T>
T get_field(const json& j, const char* key, const T& fallback) {
  if (!j.contains(key)) return fallback;
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string("config field '") + key + "' has the wrong type");
  }
}

void check_keys(const json& j, const std::set<std::string>& allowed, const std::string& where) {
  for (const auto& [k, v] : j.items())
    if (!allowed.count(k)) throw ConfigError(where + ": unknown key '" + k + "'");
}

std::string fmt9(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

}  // namespace

double round_sig9(double v) {
  if (!std::isfinite(v)) return v;
  return std::strtod(fmt9(v).c_str(), nullptr);
}

// --- config -------------------------------------------------------------------------

std::string DatasetSpec::label() const {
  return variant == Variant::kNone ? name : name + "/" + to_string(variant);
}

ExperimentConfig ExperimentConfig::preset_config(const std::string& preset) {
  ExperimentConfig c;
  if (preset == "paper") {
    c.preset = "paper";
    c.seeds = 50;
    c.architecture = VaeArchitecture::paper();
    c.training = TrainingConfig::paper();
    c.evaluation = MetricSettings::standard();
    c.unsupervised_samples = 10000;
  } else if (preset != "desk") {
    throw ConfigError("unknown preset '" + preset + "' (expected desk or paper)");
  }
  for (auto k : all_objectives()) c.objectives.push_back({k, hyperparameter_grid(k)});
  return c;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  check_keys(j,
             {"preset", "base_seed", "seeds", "datasets", "objectives", "training", "architecture", "metrics",
              "evaluation", "downstream", "unsupervised", "unsupervised_samples", "output_dir", "workers"},
             "config");
  ExperimentConfig c = preset_config(get_field<std::string>(j, "preset", "desk"));
  c.base_seed = get_field<std::uint64_t>(j, "base_seed", c.base_seed);
  c.seeds = get_field<std::size_t>(j, "seeds", c.seeds);
  if (j.contains("datasets")) {
    c.datasets.clear();
    for (const auto& d : j.at("datasets")) c.datasets.push_back(parse_dataset(d));
  }
  if (j.contains("objectives")) {
    c.objectives.clear();
    for (const auto& o : j.at("objectives")) {
      ObjectiveSweep sweep;
      if (o.is_string()) {
        sweep.kind = objective_from_string(o.get<std::string>());
        sweep.values = hyperparameter_grid(sweep.kind);
      } else {
        check_keys(o, {"kind", "values"}, "objective");
        sweep.kind = objective_from_string(get_field<std::string>(o, "kind", ""));
        if (o.contains("values")) {
          for (const auto& v : o.at("values")) sweep.values.push_back(parse_double(v, "objective value"));
        } else {
          sweep.values = hyperparameter_grid(sweep.kind);
        }
      }
      c.objectives.push_back(std::move(sweep));
    }
  }
  if (j.contains("training")) {
    const auto& t = j.at("training");
    check_keys(t, {"steps", "batch_size", "learning_rate", "trace_every"}, "training");
    c.training.steps = get_field<long>(t, "steps", c.training.steps);
    c.training.batch_size = get_field<std::size_t>(t, "batch_size", c.training.batch_size);
    c.training.optimizer.learning_rate = get_field<double>(t, "learning_rate", c.training.optimizer.learning_rate);
    c.training.discriminator_optimizer.learning_rate =
        get_field<double>(t, "learning_rate", c.training.discriminator_optimizer.learning_rate);
    c.training.trace_every = get_field<long>(t, "trace_every", c.training.trace_every);
  }
  if (j.contains("architecture")) {
    const auto& a = j.at("architecture");
    check_keys(a, {"latent_dim", "hidden", "discriminator_hidden"}, "architecture");
    c.architecture.latent_dim = get_field<std::size_t>(a, "latent_dim", c.architecture.latent_dim);
    c.architecture.hidden = get_field<std::vector<std::size_t>>(a, "hidden", c.architecture.hidden);
    c.architecture.discriminator_hidden =
        get_field<std::vector<std::size_t>>(a, "discriminator_hidden", c.architecture.discriminator_hidden);
  }
  c.metrics = get_field<std::vector<std::string>>(j, "metrics", c.metrics);
  if (j.contains("evaluation")) {
    const auto e = get_field<std::string>(j, "evaluation", "");
    if (e == "desk") c.evaluation = MetricSettings::desk();
    else if (e == "standard") c.evaluation = MetricSettings::standard();
    else throw ConfigError("evaluation must be 'desk' or 'standard'");
  }
  if (j.contains("downstream")) {
    std::vector<DownstreamConfig> kept;
    for (const auto& name : get_field<std::vector<std::string>>(j, "downstream", {})) {
      const Learner l = learner_from_string(name);
      for (const auto& d : c.evaluation.downstream)
        if (d.learner == l) kept.push_back(d);
    }
    c.evaluation.downstream = kept;
  }
  c.unsupervised = get_field<bool>(j, "unsupervised", c.unsupervised);
  c.unsupervised_samples = get_field<std::size_t>(j, "unsupervised_samples", c.unsupervised_samples);
  c.output_dir = get_field<std::string>(j, "output_dir", c.output_dir.string());
  c.workers = get_field<std::size_t>(j, "workers", c.workers);
  c.validate();
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ParseError(e.what(), 0);
  }
  return from_json(j);
}

json ExperimentConfig::to_json() const {
  json j;
  j["preset"] = preset;
  j["base_seed"] = base_seed;
  j["seeds"] = seeds;
  j["datasets"] = json::array();
  for (const auto& d : datasets) j["datasets"].push_back({{"name", d.name}, {"variant", disent::to_string(d.variant)}});
  j["objectives"] = json::array();
  for (const auto& o : objectives) {
    json values = json::array();
    for (double v : o.values) values.push_back(number_or_null(v));
    j["objectives"].push_back({{"kind", disent::to_string(o.kind)}, {"values", values}});
  }
  j["training"] = {{"steps", training.steps},
                   {"batch_size", training.batch_size},
                   {"learning_rate", training.optimizer.learning_rate},
                   {"trace_every", training.trace_every}};
  j["architecture"] = {{"latent_dim", architecture.latent_dim},
                       {"hidden", architecture.hidden},
                       {"discriminator_hidden", architecture.discriminator_hidden}};
  j["metrics"] = metrics.empty() ? kMetricNames : metrics;
  std::vector<std::string> learners;
  for (const auto& d : evaluation.downstream) learners.push_back(disent::to_string(d.learner));
  j["evaluation"] = evaluation.sample.n == MetricSettings::standard().sample.n ? "standard" : "desk";
  j["downstream"] = learners;
  j["unsupervised"] = unsupervised;
  j["unsupervised_samples"] = unsupervised_samples;
  j["output_dir"] = output_dir.string();
  j["workers"] = workers;
  return j;
}

void ExperimentConfig::validate() const {
  if (seeds == 0) throw ConfigError("seeds must be at least 1");
  if (datasets.empty()) throw ConfigError("at least one dataset is required");
  if (objectives.empty()) throw ConfigError("at least one objective is required");
  if (training.steps < 1) throw ConfigError("training.steps must be positive");
  if (training.batch_size < 2) throw ConfigError("training.batch_size must be at least 2");
  if (architecture.latent_dim == 0) throw ConfigError("architecture.latent_dim must be positive");
  for (const auto& d : datasets) GroundTruthModel::by_name(d.name, Variant::kNone);
  for (const auto& o : objectives) {
    if (o.values.empty()) throw ConfigError("objective " + disent::to_string(o.kind) + " has no values");
    for (double v : o.values) ObjectiveConfig::make(o.kind, v).validate();
    if (preset == "paper" && o.values != hyperparameter_grid(o.kind))
      throw ConfigError("preset 'paper' requires the fixed grid for " + disent::to_string(o.kind));
  }
  for (const auto& m : metrics)
    if (std::find(kMetricNames.begin(), kMetricNames.end(), m) == kMetricNames.end())
      throw ConfigError("unknown metric '" + m + "'");
}

std::vector<RunSpec> enumerate_runs(const ExperimentConfig& cfg) {
  std::vector<RunSpec> runs;
  for (const auto& d : cfg.datasets)
    for (const auto& o : cfg.objectives)
      for (double v : o.values)
        for (std::size_t s = 0; s < cfg.seeds; ++s) {
          RunSpec r;
          r.run_index = runs.size();
          r.dataset = d;
          r.objective = ObjectiveConfig::make(o.kind, v);
          r.seed = s;
          r.run_seed = derive_seed(cfg.base_seed, r.run_index);
          runs.push_back(r);
        }
  return runs;
}

// --- records ------------------------------------------------------------------------

json RunRecord::to_json() const {
  json j;
  j["schema_version"] = schema_version;
  j["run_index"] = run_index;
  j["dataset"] = dataset;
  j["objective"] = objective;
  j["hyperparameter"] = hyperparameter;
  j["value"] = number_or_null(value);
  j["seed"] = seed;
  j["run_seed"] = run_seed;
  j["steps"] = steps;
  j["wall_time_s"] = wall_time_s;
  j["status"] = status;
  if (status == "ok") {
    j["error"] = nullptr;
  } else {
    json terms = json::object();
    for (const auto& [k, v] : error_terms) terms[k] = number_or_null(v);
    j["error"] = {{"message", error},
                  {"step", error_step ? json(*error_step) : json(nullptr)},
                  {"terms", terms}};
  }
  json m = json::object();
  for (const auto& name : kMetricNames) {
    const auto it = metrics.find(name);
    m[name] = it == metrics.end() ? json(nullptr) : optional_to_json(it->second);
  }
  j["metrics"] = m;
  json u = json::object();
  for (const auto& name : kUnsupervisedNames) {
    const auto it = unsupervised.find(name);
    u[name] = it == unsupervised.end() ? json(nullptr) : optional_to_json(it->second);
  }
  j["unsupervised"] = u;
  json d = json::object();
  for (const auto& [learner, entries] : downstream) {
    json e = json::object();
    for (const auto& [k, v] : entries) e[k] = number_or_null(v);
    d[learner] = e;
  }
  j["downstream"] = d;
  return j;
}

RunRecord RunRecord::from_json(const json& j) {
  try {
    RunRecord r;
    r.schema_version = j.at("schema_version").get<int>();
    if (r.schema_version != kRecordSchemaVersion)
      throw ParseError("unsupported record schema version " + std::to_string(r.schema_version), 0);
    r.run_index = j.at("run_index").get<std::size_t>();
    r.dataset = j.at("dataset").get<std::string>();
    r.objective = j.at("objective").get<std::string>();
    r.hyperparameter = j.at("hyperparameter").get<std::string>();
    r.value = j.at("value").is_null() ? std::nan("") : j.at("value").get<double>();
    r.seed = j.at("seed").get<std::size_t>();
    r.run_seed = j.at("run_seed").get<std::uint64_t>();
    r.steps = j.at("steps").get<long>();
    r.wall_time_s = j.at("wall_time_s").get<double>();
    r.status = j.at("status").get<std::string>();
    const auto& e = j.at("error");
    if (!e.is_null()) {
      r.error = e.at("message").get<std::string>();
      if (!e.at("step").is_null()) r.error_step = e.at("step").get<long>();
      for (const auto& [k, v] : e.at("terms").items()) r.error_terms[k] = v.is_null() ? std::nan("") : v.get<double>();
    }
    for (const auto& name : kMetricNames) {
      const auto& v = j.at("metrics").at(name);
      r.metrics[name] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    }
    for (const auto& name : kUnsupervisedNames) {
      const auto& v = j.at("unsupervised").at(name);
      r.unsupervised[name] = v.is_null() ? std::nullopt : std::optional<double>(v.get<double>());
    }
    for (const auto& [learner, entries] : j.at("downstream").items())
      for (const auto& [k, v] : entries.items()) r.downstream[learner][k] = v.is_null() ? std::nan("") : v.get<double>();
    return r;
  } catch (const json::exception& e) {
    throw ParseError(std::string("malformed run record: ") + e.what(), 0);
  }
}

std::optional<double> RunRecord::score(const std::string& key) const {
  if (const auto it = metrics.find(key); it != metrics.end()) return it->second;
  if (const auto it = unsupervised.find(key); it != unsupervised.end()) return it->second;
  if (key.rfind("downstream.", 0) == 0) {
    const auto rest = key.substr(11);
    const auto dot = rest.find('.');
    if (dot == std::string::npos) throw ConfigError("downstream key must be downstream.<learner>.<entry>");
    const auto l = downstream.find(rest.substr(0, dot));
    if (l == downstream.end()) return std::nullopt;
    const auto e = l->second.find(rest.substr(dot + 1));
    if (e == l->second.end() || !std::isfinite(e->second)) return std::nullopt;
    return e->second;
  }
  if (std::find(kMetricNames.begin(), kMetricNames.end(), key) != kMetricNames.end() ||
      std::find(kUnsupervisedNames.begin(), kUnsupervisedNames.end(), key) != kUnsupervisedNames.end())
    return std::nullopt;
  throw ConfigError("unknown score key '" + key + "'");
}

json deterministic_payload(const RunRecord& r) {
  json j = r.to_json();
  j.erase("wall_time_s");
  return j;
}

// --- execution ----------------------------------------------------------------------

void evaluate_into(RunRecord& record, const TrainedModel& model, const GroundTruthModel& data, std::uint64_t seed,
                   const MetricSettings& settings, const std::vector<std::string>& metrics, bool unsupervised,
                   std::size_t unsupervised_samples) {
  for (const auto& name : kMetricNames) record.metrics[name] = std::nullopt;
  for (const auto& name : kUnsupervisedNames) record.unsupervised[name] = std::nullopt;
  const VaeRepresentation rep(model.vae, RepresentationMode::kMean);
  const MetricScores scores = evaluate_metrics(data, rep, seed, settings, metrics);
  for (const auto& [name, v] : scores.scores) record.metrics[name] = v;
  for (const auto& [learner, report] : scores.downstream) {
    auto& out = record.downstream[learner];
    for (const auto& [size, acc] : report.accuracy) out[std::to_string(size)] = acc;
    out["efficiency"] = report.efficiency;
  }
  if (unsupervised) {
    Rng rng(derive_seed(seed, 200));
    const auto u = unsupervised_scores(model.vae, data, rng, unsupervised_samples, settings.sample.bins);
    record.unsupervised = {{"recon", u.recon},     {"kl", u.kl},           {"elbo", u.elbo},
                           {"tc_mean", u.tc_mean}, {"tc_sampled", u.tc_sampled}, {"mi_mean", u.mi_mean},
                           {"mi_sampled", u.mi_sampled}};
  }
}

namespace {

RunRecord execute_on(const RunSpec& spec, const ExperimentConfig& cfg, const GroundTruthModel& data) {
  const auto start = std::chrono::steady_clock::now();
  RunRecord r;
  r.run_index = spec.run_index;
  r.dataset = spec.dataset.label();
  r.objective = to_string(spec.objective.kind);
  r.hyperparameter = spec.objective.hyperparameter_name();
  r.value = spec.objective.value;
  r.seed = spec.seed;
  r.run_seed = spec.run_seed;
  r.steps = cfg.training.steps;
  for (const auto& name : kMetricNames) r.metrics[name] = std::nullopt;
  for (const auto& name : kUnsupervisedNames) r.unsupervised[name] = std::nullopt;
  try {
    const TrainedModel model = train_model(spec.objective, cfg.architecture, data, spec.run_seed, cfg.training);
    evaluate_into(r, model, data, derive_seed(spec.run_seed, 1), cfg.evaluation, cfg.metrics, cfg.unsupervised,
                  cfg.unsupervised_samples);
  } catch (const TrainingDiverged& e) {
    r.status = "error";
    r.error = e.what();
    r.error_step = e.step();
    r.error_terms = e.terms();
  } catch (const std::exception& e) {
    r.status = "error";
    r.error = e.what();
  }
  if (!r.ok()) {
    for (auto& [k, v] : r.metrics) v = std::nullopt;
    for (auto& [k, v] : r.unsupervised) v = std::nullopt;
    r.downstream.clear();
  }
  r.wall_time_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  return r;
}

}  // namespace

RunRecord execute_run(const RunSpec& spec, const ExperimentConfig& cfg) {
  return execute_on(spec, cfg, GroundTruthModel::by_name(spec.dataset.name, spec.dataset.variant));
}

std::vector<RunRecord> run_sweep(const ExperimentConfig& cfg, const ProgressFn& progress) {
  cfg.validate();
  const auto runs = enumerate_runs(cfg);

  std::error_code ec;
  std::filesystem::create_directories(cfg.output_dir, ec);
  const auto records_path = cfg.output_dir / "records.jsonl";
  std::ofstream out(records_path, std::ios::trunc);
  if (ec || !out) throw InputError("output directory is not writable: " + cfg.output_dir.string());
  {
    std::ofstream cfg_out(cfg.output_dir / "config.json", std::ios::trunc);
    cfg_out << cfg.to_json().dump(2) << "\n";
    if (!cfg_out) throw InputError("output directory is not writable: " + cfg.output_dir.string());
  }

  std::map<std::string, GroundTruthModel> data;
  for (const auto& d : cfg.datasets)
    if (!data.count(d.label())) data.emplace(d.label(), GroundTruthModel::by_name(d.name, d.variant));

  std::vector<RunRecord> results(runs.size());
  std::vector<bool> ready(runs.size(), false);
  std::size_t next_write = 0, done = 0;
  std::mutex writer;
  std::atomic<std::size_t> next_run{0};
  std::exception_ptr failure;

  auto worker = [&] {
    for (;;) {
      const std::size_t i = next_run.fetch_add(1);
      if (i >= runs.size()) return;
      RunRecord r = execute_on(runs[i], cfg, data.at(runs[i].dataset.label()));
      std::lock_guard<std::mutex> lock(writer);
      try {
        results[i] = std::move(r);
        ready[i] = true;
        ++done;
        if (progress) progress(results[i], done, runs.size());
        while (next_write < runs.size() && ready[next_write]) {
          out << results[next_write].to_json().dump() << "\n";
          ++next_write;
        }
        out.flush();
        if (!out) throw InputError("failed writing " + records_path.string());
      } catch (...) {
        if (!failure) failure = std::current_exception();
        next_run = runs.size();
      }
    }
  };

  std::size_t n_workers = cfg.workers == 0 ? std::max(1u, std::thread::hardware_concurrency()) : cfg.workers;
  n_workers = std::max<std::size_t>(1, std::min(n_workers, runs.size()));
  if (n_workers == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t w = 0; w < n_workers; ++w) pool.emplace_back(worker);
    for (auto& t : pool) t.join();
  }
  if (failure) std::rethrow_exception(failure);
  return results;
}

// --- analyses -----------------------------------------------------------------------

namespace {

// NaN sorts last so the order is total.
bool value_less(double a, double b) {
  if (std::isnan(a)) return false;
  if (std::isnan(b)) return true;
  return a < b;
}

std::string setting_label(const RunRecord& r) { return r.objective + "|" + fmt9(r.value); }

std::vector<RunRecord> ok_records(const std::vector<RunRecord>& records) {
  std::vector<RunRecord> out;
  for (const auto& r : records)
    if (r.ok()) out.push_back(r);
  return canonical_order(std::move(out));
}

}  // namespace

std::vector<RunRecord> canonical_order(std::vector<RunRecord> records) {
  std::stable_sort(records.begin(), records.end(), [](const RunRecord& a, const RunRecord& b) {
    if (a.dataset != b.dataset) return a.dataset < b.dataset;
    if (a.objective != b.objective) return a.objective < b.objective;
    if (value_less(a.value, b.value)) return true;
    if (value_less(b.value, a.value)) return false;
    if (a.seed != b.seed) return a.seed < b.seed;
    return a.run_index < b.run_index;
  });
  return records;
}

CorrelationMatrix rank_correlation_matrix(const std::vector<RunRecord>& records,
                                          const std::vector<std::string>& keys) {
  if (keys.empty()) throw InputError("no score keys given");
  const auto rows = ok_records(records);
  const bool qualified = keys.front().find('@') != std::string::npos;
  for (const auto& k : keys)
    if ((k.find('@') != std::string::npos) != qualified)
      throw ConfigError("score keys must be all plain or all dataset-qualified");

  // columns[key][row]
  std::vector<std::vector<std::optional<double>>> columns(keys.size());
  if (!qualified) {
    for (std::size_t c = 0; c < keys.size(); ++c)
      for (const auto& r : rows) columns[c].push_back(r.score(keys[c]));
  } else {
    std::map<std::string, std::map<std::string, const RunRecord*>> groups;  // run identity -> dataset -> record
    for (const auto& r : rows) groups[setting_label(r) + "|" + std::to_string(r.seed)][r.dataset] = &r;
    for (std::size_t c = 0; c < keys.size(); ++c) {
      const auto at = keys[c].find('@');
      const auto score_key = keys[c].substr(0, at);
      const auto dataset = keys[c].substr(at + 1);
      for (const auto& [id, by_dataset] : groups) {
        const auto it = by_dataset.find(dataset);
        columns[c].push_back(it == by_dataset.end() ? std::nullopt : it->second->score(score_key));
      }
    }
  }

  CorrelationMatrix m;
  m.keys = keys;
  m.rho.assign(keys.size(), std::vector<std::optional<double>>(keys.size()));
  m.counts.assign(keys.size(), std::vector<std::size_t>(keys.size(), 0));
  for (std::size_t a = 0; a < keys.size(); ++a)
    for (std::size_t b = a; b < keys.size(); ++b) {
      std::vector<double> xa, xb;
      for (std::size_t i = 0; i < columns[a].size(); ++i)
        if (columns[a][i] && columns[b][i]) {
          xa.push_back(*columns[a][i]);
          xb.push_back(*columns[b][i]);
        }
      if (xa.size() < 2)
        throw InputError("fewer than 2 records with both '" + keys[a] + "' and '" + keys[b] + "'");
      const auto rho = spearman(xa, xb);
      m.rho[a][b] = m.rho[b][a] = rho;
      m.counts[a][b] = m.counts[b][a] = xa.size();
    }
  return m;
}

VarianceDecomposition variance_decomposition(const std::vector<RunRecord>& records, const std::string& score_key) {
  std::vector<double> y;
  std::vector<std::string> model_levels, setting_levels;
  std::set<std::string> objectives;
  std::set<std::string> values;
  for (const auto& r : ok_records(records)) {
    const auto s = r.score(score_key);
    if (!s) continue;
    y.push_back(*s);
    model_levels.push_back(r.objective);
    setting_levels.push_back(setting_label(r));
    objectives.insert(r.objective);
    values.insert(fmt9(r.value));
  }
  if (objectives.size() < 2) throw InputError("variance decomposition needs at least 2 objectives");
  if (values.size() < 2) throw InputError("variance decomposition needs at least 2 regularization values");
  const OlsResult by_model = ols_variance_explained(y, model_levels);
  const OlsResult by_setting = ols_variance_explained(y, setting_levels);
  return {by_model.r2, by_setting.r2, by_model.rank_deficient || by_setting.rank_deficient, y.size()};
}

std::string to_string(TransferMode m) {
  switch (m) {
    case TransferMode::kSameMetricSameDataset: return "same-metric,same-dataset";
    case TransferMode::kSameMetricDiffDataset: return "same-metric,diff-dataset";
    case TransferMode::kDiffMetricSameDataset: return "diff-metric,same-dataset";
    case TransferMode::kDiffMetricDiffDataset: return "diff-metric,diff-dataset";
  }
  return "";
}

TransferMode transfer_mode_from_string(const std::string& s) {
  for (auto m : {TransferMode::kSameMetricSameDataset, TransferMode::kSameMetricDiffDataset,
                 TransferMode::kDiffMetricSameDataset, TransferMode::kDiffMetricDiffDataset})
    if (to_string(m) == s) return m;
  throw ConfigError("unknown transfer mode '" + s + "'");
}

TransferResult transfer_selection_probability(const std::vector<RunRecord>& records,
                                              const std::vector<std::string>& metric_keys, TransferMode mode,
                                              std::size_t trials, Rng& rng) {
  const auto metrics = metric_keys.empty() ? kMetricNames : metric_keys;
  const bool diff_metric =
      mode == TransferMode::kDiffMetricSameDataset || mode == TransferMode::kDiffMetricDiffDataset;
  const bool diff_dataset =
      mode == TransferMode::kSameMetricDiffDataset || mode == TransferMode::kDiffMetricDiffDataset;
  const auto rows = ok_records(records);

  std::vector<std::string> datasets, settings;
  std::vector<std::size_t> seeds;
  for (const auto& r : rows) {
    if (std::find(datasets.begin(), datasets.end(), r.dataset) == datasets.end()) datasets.push_back(r.dataset);
    if (std::find(settings.begin(), settings.end(), setting_label(r)) == settings.end())
      settings.push_back(setting_label(r));
    if (std::find(seeds.begin(), seeds.end(), r.seed) == seeds.end()) seeds.push_back(r.seed);
  }
  std::sort(datasets.begin(), datasets.end());
  std::sort(seeds.begin(), seeds.end());
  if (seeds.size() < 2) throw ConfigError("transfer selection needs at least 2 seeds");
  if (diff_dataset && datasets.size() < 2) throw ConfigError("mode " + to_string(mode) + " needs at least 2 datasets");
  if (diff_metric && metrics.size() < 2) throw ConfigError("mode " + to_string(mode) + " needs at least 2 metrics");
  if (trials == 0) throw ConfigError("trials must be positive");

  const std::size_t nm = metrics.size(), nd = datasets.size(), nh = settings.size(), ns = seeds.size();
  std::vector<std::optional<double>> table(nm * nd * nh * ns);
  auto cell = [&](std::size_t m, std::size_t d, std::size_t h, std::size_t s) -> std::optional<double>& {
    return table[((m * nd + d) * nh + h) * ns + s];
  };
  for (const auto& r : rows) {
    const auto d = std::find(datasets.begin(), datasets.end(), r.dataset) - datasets.begin();
    const auto h = std::find(settings.begin(), settings.end(), setting_label(r)) - settings.begin();
    const auto s = std::find(seeds.begin(), seeds.end(), r.seed) - seeds.begin();
    for (std::size_t m = 0; m < nm; ++m) {
      const auto v = r.score(metrics[m]);
      if (v && std::isfinite(*v)) cell(m, d, h, s) = v;
    }
  }

  auto pick_other = [&](std::size_t n, std::size_t excluded) {
    const auto k = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(n - 1)));
    return k >= excluded ? k + 1 : k;
  };

  TransferResult out;
  std::size_t successes = 0;
  const std::size_t max_attempts = 20 * trials;
  for (std::size_t attempt = 0; attempt < max_attempts && out.trials < trials; ++attempt) {
    const auto s = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(ns)));
    const auto m = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(nm)));
    const auto d = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(nd)));
    const std::size_t m2 = diff_metric ? pick_other(nm, m) : m;
    const std::size_t d2 = diff_dataset ? pick_other(nd, d) : d;
    const std::size_t s2 = pick_other(ns, s);
    const auto h_random = static_cast<std::size_t>(rng.uniform_int(static_cast<int>(nh)));

    std::optional<std::size_t> best;
    for (std::size_t h = 0; h < nh; ++h) {
      const auto& v = cell(m, d, h, s);
      if (v && (!best || *v > *cell(m, d, *best, s))) best = h;
    }
    const auto chosen = best ? cell(m2, d2, *best, s2) : std::nullopt;
    const auto random = cell(m2, d2, h_random, s2);
    if (!chosen || !random) {
      ++out.skipped;
      continue;
    }
    ++out.trials;
    if (*chosen >= *random) ++successes;
  }
  if (out.trials == 0) throw InputError("no transfer trial had the scores it needed");
  out.probability = static_cast<double>(successes) / static_cast<double>(out.trials);
  return out;
}

// --- export -------------------------------------------------------------------------

ExportFormat export_format_from_string(const std::string& s) {
  const auto f = lower(s);
  if (f == "jsonl") return ExportFormat::kJsonl;
  if (f == "csv") return ExportFormat::kCsv;
  throw UsageError("unknown export format '" + s + "' (expected jsonl or csv)");
}

Selection Selection::parse(const std::string& s) {
  Selection sel;
  std::stringstream ss(s);
  std::string term;
  while (std::getline(ss, term, ',')) {
    if (term.empty()) continue;
    const auto eq = term.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("selection term '" + term + "' is not key=value");
    const auto key = term.substr(0, eq);
    static const std::set<std::string> fields{"dataset", "objective", "hyperparameter", "value",
                                              "seed",    "status",    "run_index"};
    if (!fields.count(key)) throw UsageError("cannot select on '" + key + "'");
    sel.terms.emplace_back(key, term.substr(eq + 1));
  }
  return sel;
}

bool Selection::matches(const RunRecord& r) const {
  for (const auto& [key, want] : terms) {
    bool ok = true;
    if (key == "dataset") ok = r.dataset == want;
    else if (key == "objective") ok = r.objective == want;
    else if (key == "hyperparameter") ok = r.hyperparameter == want;
    else if (key == "status") ok = r.status == want;
    else if (key == "seed") ok = std::to_string(r.seed) == want;
    else if (key == "run_index") ok = std::to_string(r.run_index) == want;
    else if (key == "value") {
      const double w = std::strtod(want.c_str(), nullptr);
      ok = (std::isnan(w) && std::isnan(r.value)) || round_sig9(w) == round_sig9(r.value);
    }
    if (!ok) return false;
  }
  return true;
}

std::vector<RunRecord> select(const std::vector<RunRecord>& records, const Selection& selection) {
  std::vector<RunRecord> out;
  for (const auto& r : records)
    if (selection.matches(r)) out.push_back(r);
  return out;
}

namespace {

const std::vector<std::string> kCsvFixedColumns = {"schema_version", "run_index", "dataset",     "objective",
                                                   "hyperparameter", "value",     "seed",        "run_seed",
                                                   "steps",          "wall_time_s", "status",    "error",
                                                   "error_step",     "error_terms"};

std::vector<std::string> downstream_columns(const std::vector<RunRecord>& records) {
  std::set<std::pair<std::string, std::string>> keys;
  for (const auto& r : records)
    for (const auto& [l, entries] : r.downstream)
      for (const auto& [k, v] : entries) keys.insert({l, k});
  // Train sizes in numeric order, efficiency last.
  std::vector<std::pair<std::string, std::string>> sorted(keys.begin(), keys.end());
  std::stable_sort(sorted.begin(), sorted.end(), [](const auto& a, const auto& b) {
    if (a.first != b.first) return a.first < b.first;
    const bool ea = a.second == "efficiency", eb = b.second == "efficiency";
    if (ea != eb) return eb;
    if (ea) return false;
    return std::stoul(a.second) < std::stoul(b.second);
  });
  std::vector<std::string> out;
  for (const auto& [l, k] : sorted) out.push_back("downstream." + l + "." + k);
  return out;
}

std::string csv_quote(const std::string& s) {
  if (s.find_first_of(",\"\n") == std::string::npos) return s;
  std::string q = "\"";
  for (char c : s) {
    if (c == '"') q += '"';
    q += c;
  }
  return q + "\"";
}

std::vector<std::string> csv_split(const std::string& line, std::size_t line_no) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(cur);
      cur.clear();
    } else {
      cur += c;
    }
  }
  if (quoted) throw ParseError("unterminated quote", line_no);
  out.push_back(cur);
  return out;
}

std::string opt9(const std::optional<double>& v) { return v ? fmt9(*v) : ""; }

json rounded_json(const RunRecord& r) {
  RunRecord c = r;
  c.value = round_sig9(c.value);
  c.wall_time_s = round_sig9(c.wall_time_s);
  for (auto& [k, v] : c.error_terms) v = round_sig9(v);
  for (auto& [k, v] : c.metrics)
    if (v) v = round_sig9(*v);
  for (auto& [k, v] : c.unsupervised)
    if (v) v = round_sig9(*v);
  for (auto& [l, entries] : c.downstream)
    for (auto& [k, v] : entries) v = round_sig9(v);
  return c.to_json();
}

double parse_csv_double(const std::string& s, std::size_t line_no) {
  char* end = nullptr;
  const double v = std::strtod(s.c_str(), &end);
  if (s.empty() || *end != '\0') throw ParseError("bad number '" + s + "'", line_no);
  return v;
}

}  // namespace

std::vector<std::string> csv_columns(const std::vector<RunRecord>& records) {
  std::vector<std::string> cols = kCsvFixedColumns;
  for (const auto& m : kMetricNames) cols.push_back("metrics." + m);
  for (const auto& u : kUnsupervisedNames) cols.push_back("unsupervised." + u);
  for (const auto& d : downstream_columns(records)) cols.push_back(d);
  return cols;
}

void export_records(const std::vector<RunRecord>& records, ExportFormat format, const std::filesystem::path& path) {
  if (records.empty()) throw InputError("nothing to export");
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw InputError("cannot write " + path.string());
  if (format == ExportFormat::kJsonl) {
    for (const auto& r : records) out << rounded_json(r).dump() << "\n";
  } else {
    const auto cols = csv_columns(records);
    for (std::size_t c = 0; c < cols.size(); ++c) out << (c ? "," : "") << cols[c];
    out << "\n";
    for (const auto& r : records) {
      json terms = json::object();
      for (const auto& [k, v] : r.error_terms) terms[k] = fmt9(v);
      std::vector<std::string> cells = {std::to_string(r.schema_version),
                                        std::to_string(r.run_index),
                                        r.dataset,
                                        r.objective,
                                        r.hyperparameter,
                                        fmt9(r.value),
                                        std::to_string(r.seed),
                                        std::to_string(r.run_seed),
                                        std::to_string(r.steps),
                                        fmt9(r.wall_time_s),
                                        r.status,
                                        r.error,
                                        r.error_step ? std::to_string(*r.error_step) : "",
                                        r.ok() ? "" : terms.dump()};
      for (const auto& m : kMetricNames) cells.push_back(opt9(r.metrics.count(m) ? r.metrics.at(m) : std::nullopt));
      for (const auto& u : kUnsupervisedNames)
        cells.push_back(opt9(r.unsupervised.count(u) ? r.unsupervised.at(u) : std::nullopt));
      for (std::size_t c = cells.size(); c < cols.size(); ++c) {
        const auto rest = cols[c].substr(11);
        const auto dot = rest.find('.');
        const auto l = r.downstream.find(rest.substr(0, dot));
        std::optional<double> v;
        if (l != r.downstream.end())
          if (const auto e = l->second.find(rest.substr(dot + 1)); e != l->second.end()) v = e->second;
        cells.push_back(opt9(v));
      }
      for (std::size_t c = 0; c < cells.size(); ++c) out << (c ? "," : "") << csv_quote(cells[c]);
      out << "\n";
    }
  }
  if (!out) throw InputError("failed writing " + path.string());
}

std::vector<RunRecord> load_records(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::vector<RunRecord> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    try {
      out.push_back(RunRecord::from_json(json::parse(line)));
    } catch (const json::parse_error& e) {
      throw ParseError(e.what(), line_no);
    } catch (const ParseError& e) {
      throw ParseError(e.what(), line_no);
    }
  }
  return out;
}

std::vector<RunRecord> import_records(const std::filesystem::path& path) {
  if (path.extension() != ".csv") return load_records(path);
  std::ifstream in(path);
  if (!in) throw InputError("cannot open " + path.string());
  std::string line;
  if (!std::getline(in, line)) throw ParseError("empty CSV", 1);
  const auto header = csv_split(line, 1);
  if (header.size() < kCsvFixedColumns.size() ||
      !std::equal(kCsvFixedColumns.begin(), kCsvFixedColumns.end(), header.begin()))
    throw ParseError("CSV header does not match record schema version " + std::to_string(kRecordSchemaVersion), 1);
  std::vector<RunRecord> out;
  std::size_t line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    const auto cells = csv_split(line, line_no);
    if (cells.size() != header.size()) throw ParseError("wrong number of columns", line_no);
    RunRecord r;
    for (const auto& m : kMetricNames) r.metrics[m] = std::nullopt;
    for (const auto& u : kUnsupervisedNames) r.unsupervised[u] = std::nullopt;
    try {
      r.schema_version = std::stoi(cells[0]);
      if (r.schema_version != kRecordSchemaVersion) throw ParseError("unsupported schema version", line_no);
      r.run_index = std::stoul(cells[1]);
      r.dataset = cells[2];
      r.objective = cells[3];
      r.hyperparameter = cells[4];
      r.value = parse_csv_double(cells[5], line_no);
      r.seed = std::stoul(cells[6]);
      r.run_seed = std::stoull(cells[7]);
      r.steps = std::stol(cells[8]);
      r.wall_time_s = parse_csv_double(cells[9], line_no);
      r.status = cells[10];
      r.error = cells[11];
      if (!cells[12].empty()) r.error_step = std::stol(cells[12]);
      if (!cells[13].empty()) {
        const json terms = json::parse(cells[13]);
        for (const auto& [k, v] : terms.items()) r.error_terms[k] = parse_csv_double(v.get<std::string>(), line_no);
      }
    } catch (const std::logic_error& e) {
      throw ParseError(std::string("bad field: ") + e.what(), line_no);
    }
    for (std::size_t c = kCsvFixedColumns.size(); c < header.size(); ++c) {
      if (cells[c].empty()) continue;
      const double v = parse_csv_double(cells[c], line_no);
      const auto& col = header[c];
      if (col.rfind("metrics.", 0) == 0) {
        r.metrics[col.substr(8)] = v;
      } else if (col.rfind("unsupervised.", 0) == 0) {
        r.unsupervised[col.substr(13)] = v;
      } else if (col.rfind("downstream.", 0) == 0) {
        const auto rest = col.substr(11);
        const auto dot = rest.find('.');
        r.downstream[rest.substr(0, dot)][rest.substr(dot + 1)] = v;
      } else {
        throw ParseError("unknown column '" + col + "'", 1);
      }
    }
    out.push_back(std::move(r));
  }
  return out;
}

}  // namespace disent
