#pragma once

#include <cstdint>
#include <deque>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gemplus/generator.hpp"
#include "gemplus/measurements.hpp"
#include "gemplus/privacy.hpp"
#include "gemplus/table.hpp"
#include "gemplus/workload.hpp"

namespace gemplus {

enum class EngineMode { gem_plus, gem_baseline };

struct EngineConfig {
  EngineMode mode = EngineMode::gem_plus;
  double alpha = 0.9;                 // measurement share of each round
  std::size_t rounds_multiplier = 16; // T = rounds_multiplier * d
  std::size_t baseline_rounds = 100;  // fixed T in baseline mode
  bool anneal = true;
  std::optional<double> gamma;        // nullopt: sqrt(2/pi) sigma n_q / n
  bool filtering = true;
  bool marginal_closure = true;
  bool one_way_init = true;
  bool ema = false;
  double ema_decay = 0.9;
  WeightScheme weight_scheme = WeightScheme::inverse_sigma;
  std::uint64_t seed = 0;
  std::size_t threads = 1;            // candidate scoring only
  GeneratorArch arch;
  TrainConfig train;

  // Settings of the original GEM algorithm: even budget split, fixed rounds,
  // no closure, filtering, annealing or 1-way initialization, raw L1 score,
  // EMA over the last T/2 models.
  static EngineConfig baseline(std::size_t rounds = 100);

  void validate() const;
  nlohmann::json to_json() const;
  static EngineConfig from_json(const nlohmann::json& j);
};

struct ScoreSummary {
  std::size_t count = 0;
  double min = 0.0;
  double max = 0.0;
  double mean = 0.0;
};

// One audit record per charged mechanism step. Initialization rows measure
// a 1-way marginal without selection (tau = 0).
struct RoundLog {
  std::size_t round = 0;
  std::string kind;  // "init", "select" or "final"
  MarginalQuery query;
  double sigma = 0.0;
  double tau = 0.0;
  ScoreSummary scores;
  std::optional<double> loss_before;
  std::optional<double> loss_after;
  std::size_t iters = 0;
  bool annealed = false;
  double rho = 0.0;

  nlohmann::json to_json() const;
  static RoundLog from_json(const nlohmann::json& j);
};

// L1(real, synth) - sqrt(2/pi) * sigma * n_q, both in counts space.
double aim_score(const MarginalVector& real, const MarginalVector& synth,
                 double sigma, std::size_t n_q);

// True iff the L1 change between two normalized marginals is <= gamma.
bool anneal_check(const MarginalVector& prev, const MarginalVector& curr,
                  double gamma);

struct FitOutput {
  GeneratorModel model;
  std::vector<RoundLog> log;
  PrivacyAccountant accountant{0.0};
  MeasurementStore store;
  std::vector<std::string> notices;
};

// Select-measure-generate loop. Drive with initialize() then step() until it
// returns false, or call run(). The full state can be checkpointed between
// steps and resumed against the same data.
class Engine {
 public:
  using RoundCallback = std::function<void(const RoundLog&)>;

  Engine(const DiscreteTable& data, Workload workload, double epsilon,
         double delta, EngineConfig cfg);

  void initialize();
  bool step();
  bool finished() const { return finished_; }
  FitOutput finish();
  FitOutput run();

  void on_round(RoundCallback cb) { callback_ = std::move(cb); }

  const GeneratorModel& model() const { return model_; }
  const PrivacyAccountant& accountant() const { return accountant_; }
  const MeasurementStore& store() const { return store_; }
  const std::vector<RoundLog>& log() const { return log_; }
  const Workload& closed_workload() const { return closed_; }
  NoiseParams noise() const { return noise_; }
  std::size_t planned_rounds() const { return planned_rounds_; }

  nlohmann::json checkpoint() const;
  static Engine resume(const DiscreteTable& data, const nlohmann::json& ckpt);

 private:
  struct Restore {};
  Engine(const DiscreteTable& data, Restore);

  const std::vector<double>& exact(const MarginalQuery& q) const;
  void precompute_exact(const Workload& queries);
  std::vector<double> score_candidates(const std::vector<MarginalQuery>& cands,
                                       const SoftRows& rows, double sigma,
                                       std::vector<MarginalVector>& soft) const;
  void emit(RoundLog entry);
  void snapshot();

  const DiscreteTable* data_;
  double n_;
  Workload workload_;
  Workload closed_;
  double epsilon_ = 0.0;
  double delta_ = 0.0;
  EngineConfig cfg_;
  std::size_t planned_rounds_ = 0;
  double rho_round_ = 0.0;
  NoiseParams noise_;
  PrivacyAccountant accountant_{0.0};
  MeasurementStore store_;
  GeneratorModel model_;
  Rng select_rng_;
  Rng measure_rng_;
  std::size_t round_ = 0;
  bool initialized_ = false;
  bool finished_ = false;
  std::vector<RoundLog> log_;
  std::vector<std::string> notices_;
  std::deque<GeneratorModel> snapshots_;
  std::map<MarginalQuery, std::vector<double>> exact_;
  RoundCallback callback_;
};

FitOutput gem_plus_fit(const DiscreteTable& data, const Workload& workload,
                       double epsilon, double delta, EngineConfig cfg);

// Forces the baseline choices of EngineConfig::baseline onto `cfg` (keeping
// its seeds, architecture, training settings and baseline_rounds).
FitOutput gem_baseline_fit(const DiscreteTable& data, const Workload& workload,
                           double epsilon, double delta, EngineConfig cfg);

// FNV-1a fingerprint of the schema and cell values.
std::uint64_t table_fingerprint(const DiscreteTable& data);

}  // namespace gemplus
