#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "gemplus/table.hpp"

namespace gemplus {

// Seeded 64-bit Mersenne Twister whose full state can be saved and restored.
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  double normal() { return normal_(engine_); }
  // Uniform on [0, 1).
  double uniform() { return uniform_(engine_); }
  std::mt19937_64& engine() { return engine_; }

  std::string state() const;
  void set_state(const std::string& state);

  bool operator==(const Rng& other) const {
    return engine_ == other.engine_ && normal_ == other.normal_;
  }

 private:
  std::mt19937_64 engine_;
  std::normal_distribution<double> normal_;
  std::uniform_real_distribution<double> uniform_;
};

// Independent stream seed for `stream` derived from a master seed.
std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream);

struct LedgerEntry {
  std::string label;
  double rho = 0.0;
};

// Tracks zCDP spending under linear composition. Charges that would push the
// total past rho_total (plus kBudgetSlack) are refused and leave the state
// unchanged.
class PrivacyAccountant {
 public:
  static constexpr double kBudgetSlack = 1e-12;

  explicit PrivacyAccountant(double rho_total);

  void charge(const std::string& label, double rho);
  bool can_afford(double rho) const;
  double remaining() const { return rho_total_ - rho_spent_; }
  double rho_total() const { return rho_total_; }
  double rho_spent() const { return rho_spent_; }
  const std::vector<LedgerEntry>& ledger() const { return ledger_; }

  nlohmann::json to_json() const;
  static PrivacyAccountant from_json(const nlohmann::json& j);

 private:
  double rho_total_;
  double rho_spent_ = 0.0;
  std::vector<LedgerEntry> ledger_;
};

struct NoiseParams {
  double sigma = 1.0;
  double tau = 1.0;
};

inline double gaussian_cost(double sigma) { return 1.0 / (2.0 * sigma * sigma); }
inline double exp_mech_cost(double tau) { return tau * tau / 8.0; }
inline double round_cost(const NoiseParams& p) {
  return gaussian_cost(p.sigma) + exp_mech_cost(p.tau);
}

// Largest rho with rho + 2 sqrt(rho ln(1/delta)) <= epsilon, by bisection.
double eps_delta_to_rho(double epsilon, double delta);

// The (epsilon, delta) guarantee implied by rho-zCDP under the same bound.
double rho_to_epsilon(double rho, double delta);

// Splits one round's budget: a fraction `alpha` to measurement (sigma), the
// rest to selection (tau).
NoiseParams calibrate_round(double rho_round, double alpha);

// Adds N(0, sigma^2) to every cell and charges 1/(2 sigma^2). Output is not
// clipped.
MarginalVector gaussian_measure(const MarginalVector& v, double sigma, Rng& rng,
                                PrivacyAccountant& accountant,
                                const std::string& label);

// Selection probabilities proportional to exp(tau * s / (2 * sensitivity)).
std::vector<double> exp_mech_probabilities(std::span<const double> scores,
                                           double tau, double sensitivity);

// Draws from exp_mech_probabilities by cumulative-sum inversion. No charge.
std::size_t exp_mech_sample(std::span<const double> scores, double tau,
                            double sensitivity, Rng& rng);

// Exponential mechanism; charges tau^2 / 8.
std::size_t exp_mech_select(std::span<const double> scores, double tau,
                            double sensitivity, Rng& rng,
                            PrivacyAccountant& accountant,
                            const std::string& label);

}  // namespace gemplus
