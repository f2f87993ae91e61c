#include "gemplus/engine.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <thread>

#include "gemplus/error.hpp"

namespace gemplus {

namespace {

constexpr int kCheckpointFormatVersion = 1;
constexpr std::uint64_t kSelectStream = 11;
constexpr std::uint64_t kMeasureStream = 12;
constexpr std::uint64_t kModelStream = 13;
// Remainders below this fraction of a planned round are left unspent.
constexpr double kNegligibleRemainder = 1e-9;

const double kSqrt2OverPi = std::sqrt(2.0 / std::numbers::pi);

template <typename Fn>
void parallel_for(std::size_t count, std::size_t threads, Fn&& fn) {
  threads = std::max<std::size_t>(1, std::min(threads, count));
  if (threads == 1) {
    for (std::size_t i = 0; i < count; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  pool.reserve(threads);
  const std::size_t chunk = (count + threads - 1) / threads;
  for (std::size_t t = 0; t < threads; ++t) {
    const std::size_t lo = t * chunk;
    const std::size_t hi = std::min(count, lo + chunk);
    if (lo >= hi) break;
    pool.emplace_back([lo, hi, &fn] {
      for (std::size_t i = lo; i < hi; ++i) fn(i);
    });
  }
  for (auto& th : pool) th.join();
}

double l1(const std::vector<double>& a, const std::vector<double>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) s += std::abs(a[i] - b[i]);
  return s;
}

ScoreSummary summarize(const std::vector<double>& scores) {
  ScoreSummary s;
  s.count = scores.size();
  if (scores.empty()) return s;
  auto [mn, mx] = std::minmax_element(scores.begin(), scores.end());
  s.min = *mn;
  s.max = *mx;
  double total = 0.0;
  for (double x : scores) total += x;
  s.mean = total / static_cast<double>(scores.size());
  return s;
}

void reject_unknown_keys(const nlohmann::json& j,
                         std::initializer_list<const char*> known,
                         const std::string& where) {
  for (const auto& [key, _] : j.items()) {
    if (std::find_if(known.begin(), known.end(), [&](const char* k) {
          return key == k;
        }) == known.end()) {
      throw ConfigError("unknown key '" + key + "' in " + where);
    }
  }
}

nlohmann::json train_to_json(const TrainConfig& t) {
  return {{"max_iters", t.max_iters},
          {"learning_rate", t.learning_rate},
          {"early_stop_tol", t.early_stop_tol},
          {"early_stop_patience", t.early_stop_patience},
          {"optimizer", t.optimizer == OptimizerKind::adam ? "adam" : "sgd"},
          {"beta1", t.beta1},
          {"beta2", t.beta2},
          {"adam_eps", t.adam_eps},
          {"measurement_batch", t.measurement_batch}};
}

TrainConfig train_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j,
                      {"max_iters", "learning_rate", "early_stop_tol",
                       "early_stop_patience", "optimizer", "beta1", "beta2",
                       "adam_eps", "measurement_batch"},
                      "train config");
  TrainConfig t;
  t.max_iters = j.value("max_iters", t.max_iters);
  t.learning_rate = j.value("learning_rate", t.learning_rate);
  t.early_stop_tol = j.value("early_stop_tol", t.early_stop_tol);
  t.early_stop_patience = j.value("early_stop_patience", t.early_stop_patience);
  const auto opt = j.value("optimizer", std::string("adam"));
  if (opt == "adam") {
    t.optimizer = OptimizerKind::adam;
  } else if (opt == "sgd") {
    t.optimizer = OptimizerKind::sgd;
  } else {
    throw ConfigError("optimizer must be 'adam' or 'sgd'");
  }
  t.beta1 = j.value("beta1", t.beta1);
  t.beta2 = j.value("beta2", t.beta2);
  t.adam_eps = j.value("adam_eps", t.adam_eps);
  t.measurement_batch = j.value("measurement_batch", t.measurement_batch);
  return t;
}

nlohmann::json arch_to_json(const GeneratorArch& a) {
  nlohmann::json j{{"batch_size", a.batch_size}};
  if (a.latent_dim) j["latent_dim"] = *a.latent_dim;
  if (a.hidden) j["hidden_dims"] = *a.hidden;
  return j;
}

GeneratorArch arch_from_json(const nlohmann::json& j) {
  reject_unknown_keys(j, {"batch_size", "latent_dim", "hidden_dims"},
                      "generator config");
  GeneratorArch a;
  a.batch_size = j.value("batch_size", a.batch_size);
  if (j.contains("latent_dim")) a.latent_dim = j["latent_dim"].get<std::size_t>();
  if (j.contains("hidden_dims")) {
    a.hidden = j["hidden_dims"].get<std::vector<std::size_t>>();
  }
  return a;
}

}  // namespace

// --- EngineConfig ----------------------------------------------------------

EngineConfig EngineConfig::baseline(std::size_t rounds) {
  EngineConfig c;
  c.mode = EngineMode::gem_baseline;
  c.alpha = 0.5;
  c.baseline_rounds = rounds;
  c.anneal = false;
  c.filtering = false;
  c.marginal_closure = false;
  c.one_way_init = false;
  c.ema = true;
  return c;
}

void EngineConfig::validate() const {
  if (!(alpha > 0.0 && alpha < 1.0)) throw ConfigError("alpha must lie in (0, 1)");
  if (rounds_multiplier < 1) throw ConfigError("rounds_multiplier must be >= 1");
  if (baseline_rounds < 1) throw ConfigError("baseline_rounds must be >= 1");
  if (gamma && !(*gamma >= 0.0)) throw ConfigError("gamma must be >= 0");
  if (!(ema_decay >= 0.0 && ema_decay < 1.0)) {
    throw ConfigError("ema_decay must lie in [0, 1)");
  }
  if (arch.batch_size < 1) throw ConfigError("generator batch_size must be >= 1");
  train.validate();
}

nlohmann::json EngineConfig::to_json() const {
  return {{"mode", mode == EngineMode::gem_plus ? "gem_plus" : "gem_baseline"},
          {"alpha", alpha},
          {"rounds_multiplier", rounds_multiplier},
          {"baseline_rounds", baseline_rounds},
          {"anneal", anneal},
          {"gamma", gamma ? nlohmann::json(*gamma) : nlohmann::json("auto")},
          {"filtering", filtering},
          {"marginal_closure", marginal_closure},
          {"one_way_init", one_way_init},
          {"ema", ema},
          {"ema_decay", ema_decay},
          {"weight_scheme", weight_scheme == WeightScheme::inverse_sigma
                                ? "inverse_sigma"
                                : "inverse_variance"},
          {"seed", seed},
          {"threads", threads},
          {"generator", arch_to_json(arch)},
          {"train", train_to_json(train)}};
}

EngineConfig EngineConfig::from_json(const nlohmann::json& j) {
  try {
    reject_unknown_keys(j,
                        {"mode", "alpha", "rounds_multiplier", "baseline_rounds",
                         "anneal", "gamma", "filtering", "marginal_closure",
                         "one_way_init", "ema", "ema_decay", "weight_scheme",
                         "seed", "threads", "generator", "train"},
                        "engine config");
    const auto mode = j.value("mode", std::string("gem_plus"));
    EngineConfig c;
    if (mode == "gem_baseline") {
      c = baseline(j.value("baseline_rounds", std::size_t{100}));
    } else if (mode != "gem_plus") {
      throw ConfigError("mode must be 'gem_plus' or 'gem_baseline'");
    }
    c.alpha = j.value("alpha", c.alpha);
    c.rounds_multiplier = j.value("rounds_multiplier", c.rounds_multiplier);
    c.baseline_rounds = j.value("baseline_rounds", c.baseline_rounds);
    c.anneal = j.value("anneal", c.anneal);
    if (j.contains("gamma")) {
      const auto& g = j["gamma"];
      if (g.is_string() && g.get<std::string>() == "auto") {
        c.gamma.reset();
      } else if (g.is_number()) {
        c.gamma = g.get<double>();
      } else {
        throw ConfigError("gamma must be \"auto\" or a number");
      }
    }
    c.filtering = j.value("filtering", c.filtering);
    c.marginal_closure = j.value("marginal_closure", c.marginal_closure);
    c.one_way_init = j.value("one_way_init", c.one_way_init);
    c.ema = j.value("ema", c.ema);
    c.ema_decay = j.value("ema_decay", c.ema_decay);
    const auto scheme = j.value("weight_scheme", std::string("inverse_sigma"));
    if (scheme == "inverse_sigma") {
      c.weight_scheme = WeightScheme::inverse_sigma;
    } else if (scheme == "inverse_variance") {
      c.weight_scheme = WeightScheme::inverse_variance;
    } else {
      throw ConfigError("weight_scheme must be inverse_sigma or inverse_variance");
    }
    c.seed = j.value("seed", c.seed);
    c.threads = j.value("threads", c.threads);
    if (j.contains("generator")) c.arch = arch_from_json(j["generator"]);
    if (j.contains("train")) c.train = train_from_json(j["train"]);
    c.validate();
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed engine config: ") + e.what());
  }
}

// --- RoundLog --------------------------------------------------------------

nlohmann::json RoundLog::to_json() const {
  nlohmann::json j{{"round", round},
                   {"kind", kind},
                   {"query", query.cols()},
                   {"sigma", sigma},
                   {"tau", tau},
                   {"rho", rho},
                   {"annealed", annealed},
                   {"iters", iters}};
  if (scores.count > 0) {
    j["scores"] = {{"count", scores.count},
                   {"min", scores.min},
                   {"max", scores.max},
                   {"mean", scores.mean}};
  }
  if (loss_before) j["loss_before"] = *loss_before;
  if (loss_after) j["loss_after"] = *loss_after;
  return j;
}

RoundLog RoundLog::from_json(const nlohmann::json& j) {
  RoundLog r;
  r.round = j.at("round").get<std::size_t>();
  r.kind = j.at("kind").get<std::string>();
  r.query = MarginalQuery(j.at("query").get<std::vector<int>>());
  r.sigma = j.at("sigma").get<double>();
  r.tau = j.at("tau").get<double>();
  r.rho = j.at("rho").get<double>();
  r.annealed = j.at("annealed").get<bool>();
  r.iters = j.at("iters").get<std::size_t>();
  if (j.contains("scores")) {
    const auto& s = j["scores"];
    r.scores = {s.at("count").get<std::size_t>(), s.at("min").get<double>(),
                s.at("max").get<double>(), s.at("mean").get<double>()};
  }
  if (j.contains("loss_before")) r.loss_before = j["loss_before"].get<double>();
  if (j.contains("loss_after")) r.loss_after = j["loss_after"].get<double>();
  return r;
}

// --- Scores ----------------------------------------------------------------

double aim_score(const MarginalVector& real, const MarginalVector& synth,
                 double sigma, std::size_t n_q) {
  if (!(real.query == synth.query) || real.values.size() != synth.values.size()) {
    throw std::invalid_argument("aim_score: query mismatch");
  }
  if (real.values.size() != n_q) {
    throw std::invalid_argument("aim_score: n_q differs from the query size");
  }
  return l1(real.values, synth.values) -
         kSqrt2OverPi * sigma * static_cast<double>(n_q);
}

bool anneal_check(const MarginalVector& prev, const MarginalVector& curr,
                  double gamma) {
  if (!(prev.query == curr.query) || prev.values.size() != curr.values.size()) {
    throw std::invalid_argument("anneal_check: query mismatch");
  }
  return l1(prev.values, curr.values) <= gamma;
}

// --- Engine ----------------------------------------------------------------

Engine::Engine(const DiscreteTable& data, Workload workload, double epsilon,
               double delta, EngineConfig cfg)
    : data_(&data),
      n_(static_cast<double>(data.rows())),
      workload_(std::move(workload)),
      epsilon_(epsilon),
      delta_(delta),
      cfg_(std::move(cfg)),
      select_rng_(derive_seed(cfg_.seed, kSelectStream)),
      measure_rng_(derive_seed(cfg_.seed, kMeasureStream)) {
  cfg_.validate();
  if (data.rows() == 0) throw DataError("cannot fit on an empty table");
  if (workload_.empty()) throw ConfigError("workload is empty");
  validate_workload(workload_, data.schema());
  if (!(epsilon > 0.0) || !std::isfinite(epsilon)) {
    throw ConfigError("epsilon must be finite and positive");
  }
  if (!(delta > 0.0 && delta < 1.0)) throw ConfigError("delta must lie in (0, 1)");

  const std::size_t d = data.cols();
  const double rho_total = eps_delta_to_rho(epsilon, delta);
  accountant_ = PrivacyAccountant(rho_total);
  store_ = MeasurementStore(cfg_.weight_scheme);
  if (cfg_.mode == EngineMode::gem_plus) {
    closed_ = downward_closure(workload_);
    planned_rounds_ = cfg_.rounds_multiplier * d;
  } else {
    closed_ = workload_;
    planned_rounds_ = cfg_.baseline_rounds;
  }
  rho_round_ = rho_total / static_cast<double>(planned_rounds_);
  noise_ = calibrate_round(rho_round_, cfg_.alpha);

  GeneratorArch arch = cfg_.arch;
  arch.seed = derive_seed(cfg_.seed, kModelStream);
  model_ = init_generator(data.schema(), arch);
}

Engine::Engine(const DiscreteTable& data, Restore)
    : data_(&data), n_(static_cast<double>(data.rows())) {}

void Engine::precompute_exact(const Workload& queries) {
  std::vector<MarginalQuery> todo;
  for (const auto& q : queries) {
    if (!exact_.count(q)) todo.push_back(q);
  }
  std::vector<std::vector<double>> values(todo.size());
  parallel_for(todo.size(), cfg_.threads, [&](std::size_t i) {
    values[i] = evaluate_marginal(*data_, todo[i]).values;
  });
  for (std::size_t i = 0; i < todo.size(); ++i) {
    exact_.emplace(std::move(todo[i]), std::move(values[i]));
  }
}

const std::vector<double>& Engine::exact(const MarginalQuery& q) const {
  return exact_.at(q);
}

void Engine::emit(RoundLog entry) {
  log_.push_back(std::move(entry));
  if (callback_) callback_(log_.back());
}

void Engine::snapshot() {
  if (!cfg_.ema) return;
  const std::size_t window = std::max<std::size_t>(1, planned_rounds_ / 2);
  snapshots_.push_back(model_);
  while (snapshots_.size() > window) snapshots_.pop_front();
}

void Engine::initialize() {
  if (initialized_) return;
  initialized_ = true;
  precompute_exact(closed_);
  if (cfg_.mode != EngineMode::gem_plus || !cfg_.one_way_init) return;

  const auto& schema = data_->schema();
  std::vector<MarginalQuery> one_way;
  for (const auto& q : closed_) {
    if (q.arity() == 1) one_way.push_back(q);
  }
  for (const auto& q : one_way) {
    MarginalVector real{q, exact(q), MarginalSpace::counts};
    auto noisy = gaussian_measure(real, noise_.sigma, measure_rng_, accountant_,
                                  "init: measure " + q.str());
    store_.record(noisy, noise_.sigma, schema, cfg_.marginal_closure);
  }
  if (one_way.empty()) return;
  const FitResult fit = fit_round(model_, store_, n_, cfg_.train);
  for (std::size_t i = 0; i < one_way.size(); ++i) {
    RoundLog entry;
    entry.round = 0;
    entry.kind = "init";
    entry.query = one_way[i];
    entry.sigma = noise_.sigma;
    entry.rho = gaussian_cost(noise_.sigma);
    if (i + 1 == one_way.size()) {
      entry.loss_before = fit.initial_loss;
      entry.loss_after = fit.final_loss;
      entry.iters = fit.iters;
    }
    emit(std::move(entry));
  }
  snapshot();
}

std::vector<double> Engine::score_candidates(
    const std::vector<MarginalQuery>& cands, const SoftRows& rows, double sigma,
    std::vector<MarginalVector>& soft) const {
  std::vector<double> scores(cands.size());
  soft.assign(cands.size(), MarginalVector{});
  const auto& schema = data_->schema();
  parallel_for(cands.size(), cfg_.threads, [&](std::size_t i) {
    soft[i] = soft_marginal(rows, cands[i]);
    MarginalVector synth{cands[i], soft[i].values, MarginalSpace::counts};
    for (double& x : synth.values) x *= n_;
    const MarginalVector real{cands[i], exact(cands[i]), MarginalSpace::counts};
    scores[i] = aim_score(real, synth, sigma, query_size(cands[i], schema));
  });
  return scores;
}

bool Engine::step() {
  if (!initialized_) initialize();
  if (finished_) return false;
  const bool plus = cfg_.mode == EngineMode::gem_plus;

  if (!plus && round_ >= planned_rounds_) {
    finished_ = true;
    return false;
  }
  const Workload cands_w = cfg_.filtering ? store_.candidates(closed_) : closed_;
  if (cands_w.empty()) {
    notices_.push_back("candidate set exhausted after " +
                       std::to_string(round_) + " rounds with " +
                       std::to_string(accountant_.remaining()) +
                       " rho remaining");
    finished_ = true;
    return false;
  }

  NoiseParams params = noise_;
  bool final_round = false;
  if (!accountant_.can_afford(round_cost(params))) {
    const double rest = accountant_.remaining();
    if (!(rest > kNegligibleRemainder * rho_round_)) {
      finished_ = true;
      return false;
    }
    params = calibrate_round(rest, cfg_.alpha);
    final_round = true;
  }

  ++round_;
  const std::vector<MarginalQuery> cands(cands_w.begin(), cands_w.end());
  const SoftRows rows = forward(model_);
  std::vector<MarginalVector> soft;
  const double score_sigma = plus ? params.sigma : 0.0;
  const auto scores = score_candidates(cands, rows, score_sigma, soft);

  const std::string tag = "round " + std::to_string(round_) + ": ";
  const std::size_t pick =
      exp_mech_select(scores, params.tau, 1.0, select_rng_, accountant_,
                      tag + "select");
  const MarginalQuery& q = cands[pick];
  const MarginalVector real{q, exact(q), MarginalSpace::counts};
  const auto noisy = gaussian_measure(real, params.sigma, measure_rng_,
                                      accountant_, tag + "measure " + q.str());
  store_.record(noisy, params.sigma, data_->schema(), cfg_.marginal_closure);

  const FitResult fit = fit_round(model_, store_, n_, cfg_.train);

  RoundLog entry;
  entry.round = round_;
  entry.kind = final_round ? "final" : "select";
  entry.query = q;
  entry.sigma = params.sigma;
  entry.tau = params.tau;
  entry.scores = summarize(scores);
  entry.loss_before = fit.initial_loss;
  entry.loss_after = fit.final_loss;
  entry.iters = fit.iters;
  entry.rho = round_cost(params);

  if (plus && cfg_.anneal && !final_round) {
    const auto after = soft_marginal(forward(model_), q);
    const double gamma =
        cfg_.gamma.value_or(kSqrt2OverPi * params.sigma *
                            static_cast<double>(query_size(q, data_->schema())) /
                            n_);
    if (anneal_check(soft[pick], after, gamma)) {
      noise_.sigma /= 2.0;
      noise_.tau *= 2.0;
      entry.annealed = true;
    }
  }
  emit(std::move(entry));
  snapshot();
  if (final_round) finished_ = true;
  return !finished_;
}

FitOutput Engine::finish() {
  finished_ = true;
  FitOutput out;
  out.model = (cfg_.ema && !snapshots_.empty())
                  ? ema_combine(std::vector<GeneratorModel>(snapshots_.begin(),
                                                            snapshots_.end()),
                                cfg_.ema_decay)
                  : model_;
  out.log = log_;
  out.accountant = accountant_;
  out.store = store_;
  out.notices = notices_;
  return out;
}

FitOutput Engine::run() {
  initialize();
  while (step()) {
  }
  return finish();
}

nlohmann::json Engine::checkpoint() const {
  nlohmann::json log = nlohmann::json::array();
  for (const auto& r : log_) log.push_back(r.to_json());
  nlohmann::json snaps = nlohmann::json::array();
  for (const auto& m : snapshots_) snaps.push_back(m.to_json());
  return {{"format_version", kCheckpointFormatVersion},
          {"data_fingerprint", table_fingerprint(*data_)},
          {"workload", workload_to_json(workload_, data_->schema())},
          {"epsilon", epsilon_},
          {"delta", delta_},
          {"config", cfg_.to_json()},
          {"planned_rounds", planned_rounds_},
          {"rho_round", rho_round_},
          {"sigma", noise_.sigma},
          {"tau", noise_.tau},
          {"round", round_},
          {"initialized", initialized_},
          {"finished", finished_},
          {"model", model_.to_json()},
          {"store", store_.to_json()},
          {"accountant", accountant_.to_json()},
          {"select_rng", select_rng_.state()},
          {"measure_rng", measure_rng_.state()},
          {"log", std::move(log)},
          {"notices", notices_},
          {"snapshots", std::move(snaps)}};
}

Engine Engine::resume(const DiscreteTable& data, const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kCheckpointFormatVersion) {
      throw ConfigError("unsupported checkpoint format_version");
    }
    if (j.at("data_fingerprint").get<std::uint64_t>() !=
        table_fingerprint(data)) {
      throw DataError("checkpoint was written for different data");
    }
    Engine e(data, Restore{});
    e.workload_ = parse_workload(j.at("workload"), data.schema());
    e.epsilon_ = j.at("epsilon").get<double>();
    e.delta_ = j.at("delta").get<double>();
    e.cfg_ = EngineConfig::from_json(j.at("config"));
    e.closed_ = e.cfg_.mode == EngineMode::gem_plus
                    ? downward_closure(e.workload_)
                    : e.workload_;
    e.planned_rounds_ = j.at("planned_rounds").get<std::size_t>();
    e.rho_round_ = j.at("rho_round").get<double>();
    e.noise_ = {j.at("sigma").get<double>(), j.at("tau").get<double>()};
    e.round_ = j.at("round").get<std::size_t>();
    e.initialized_ = j.at("initialized").get<bool>();
    e.finished_ = j.at("finished").get<bool>();
    e.model_ = GeneratorModel::from_json(j.at("model"));
    e.store_ = MeasurementStore::from_json(j.at("store"));
    e.accountant_ = PrivacyAccountant::from_json(j.at("accountant"));
    e.select_rng_.set_state(j.at("select_rng").get<std::string>());
    e.measure_rng_.set_state(j.at("measure_rng").get<std::string>());
    for (const auto& r : j.at("log")) e.log_.push_back(RoundLog::from_json(r));
    e.notices_ = j.at("notices").get<std::vector<std::string>>();
    for (const auto& m : j.at("snapshots")) {
      e.snapshots_.push_back(GeneratorModel::from_json(m));
    }
    if (e.initialized_) e.precompute_exact(e.closed_);
    return e;
  } catch (const nlohmann::json::exception& ex) {
    throw ConfigError(std::string("malformed checkpoint: ") + ex.what());
  }
}

FitOutput gem_plus_fit(const DiscreteTable& data, const Workload& workload,
                       double epsilon, double delta, EngineConfig cfg) {
  cfg.mode = EngineMode::gem_plus;
  Engine engine(data, workload, epsilon, delta, std::move(cfg));
  return engine.run();
}

FitOutput gem_baseline_fit(const DiscreteTable& data, const Workload& workload,
                           double epsilon, double delta, EngineConfig cfg) {
  EngineConfig b = EngineConfig::baseline(cfg.baseline_rounds);
  b.seed = cfg.seed;
  b.threads = cfg.threads;
  b.arch = cfg.arch;
  b.train = cfg.train;
  b.ema_decay = cfg.ema_decay;
  b.weight_scheme = cfg.weight_scheme;
  Engine engine(data, workload, epsilon, delta, std::move(b));
  return engine.run();
}

std::uint64_t table_fingerprint(const DiscreteTable& data) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xff;
      h *= 0x100000001b3ULL;
    }
  };
  mix(data.rows());
  mix(data.cols());
  for (std::size_t j = 0; j < data.cols(); ++j) {
    mix(data.schema().cardinality(j));
    for (Category v : data.column(j)) mix(v);
  }
  return h;
}

}  // namespace gemplus
