#include "gemplus/privacy.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "gemplus/error.hpp"

namespace gemplus {

namespace {

constexpr int kLedgerFormatVersion = 1;

void require_positive(double v, const char* what) {
  if (!(v > 0.0) || !std::isfinite(v)) {
    throw std::invalid_argument(std::string(what) +
                                " must be finite and positive");
  }
}

}  // namespace

std::string Rng::state() const {
  std::ostringstream os;
  os << engine_ << ' ' << normal_;
  return os.str();
}

void Rng::set_state(const std::string& state) {
  std::istringstream is(state);
  is >> engine_ >> normal_;
  if (!is) throw ConfigError("corrupt rng state");
  uniform_.reset();
}

std::uint64_t derive_seed(std::uint64_t master, std::uint64_t stream) {
  // splitmix64 finalizer over the combined value
  std::uint64_t z = master + 0x9e3779b97f4a7c15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

// --- Accountant ------------------------------------------------------------

PrivacyAccountant::PrivacyAccountant(double rho_total) : rho_total_(rho_total) {
  if (!(rho_total >= 0.0) || !std::isfinite(rho_total)) {
    throw std::invalid_argument("rho_total must be finite and nonnegative");
  }
}

bool PrivacyAccountant::can_afford(double rho) const {
  return rho_spent_ + rho <= rho_total_ + kBudgetSlack;
}

void PrivacyAccountant::charge(const std::string& label, double rho) {
  if (!(rho >= 0.0) || !std::isfinite(rho)) {
    throw std::invalid_argument("charge '" + label +
                                "' must be finite and nonnegative");
  }
  if (!can_afford(rho)) {
    std::ostringstream os;
    os.precision(17);
    os << "privacy budget exhausted: charge '" << label << "' of " << rho
       << " exceeds remaining " << remaining();
    throw BudgetError(os.str());
  }
  rho_spent_ += rho;
  ledger_.push_back({label, rho});
}

nlohmann::json PrivacyAccountant::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& e : ledger_) {
    entries.push_back({{"label", e.label}, {"rho", e.rho}});
  }
  return {{"format_version", kLedgerFormatVersion},
          {"rho_total", rho_total_},
          {"rho_spent", rho_spent_},
          {"remaining", remaining()},
          {"entries", std::move(entries)}};
}

PrivacyAccountant PrivacyAccountant::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kLedgerFormatVersion) {
      throw ConfigError("unsupported ledger format_version");
    }
    PrivacyAccountant acc(j.at("rho_total").get<double>());
    for (const auto& e : j.at("entries")) {
      acc.charge(e.at("label").get<std::string>(), e.at("rho").get<double>());
    }
    return acc;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed ledger JSON: ") + e.what());
  }
}

// --- Conversions -----------------------------------------------------------

double rho_to_epsilon(double rho, double delta) {
  return rho + 2.0 * std::sqrt(rho * std::log(1.0 / delta));
}

double eps_delta_to_rho(double epsilon, double delta) {
  require_positive(epsilon, "epsilon");
  if (!(delta > 0.0 && delta < 1.0)) {
    throw std::invalid_argument("delta must lie in (0, 1)");
  }
  // rho_to_epsilon is increasing in rho and exceeds epsilon at rho = epsilon.
  double lo = 0.0;
  double hi = epsilon;
  for (int it = 0; it < 2000; ++it) {
    const double mid = lo + 0.5 * (hi - lo);
    if (mid <= lo || mid >= hi) break;
    if (rho_to_epsilon(mid, delta) <= epsilon) {
      lo = mid;
    } else {
      hi = mid;
    }
  }
  return lo;
}

NoiseParams calibrate_round(double rho_round, double alpha) {
  require_positive(rho_round, "rho_round");
  if (!(alpha > 0.0 && alpha < 1.0)) {
    throw std::invalid_argument("alpha must lie in (0, 1)");
  }
  return {std::sqrt(1.0 / (2.0 * alpha * rho_round)),
          std::sqrt(8.0 * (1.0 - alpha) * rho_round)};
}

// --- Mechanisms ------------------------------------------------------------

MarginalVector gaussian_measure(const MarginalVector& v, double sigma, Rng& rng,
                                PrivacyAccountant& accountant,
                                const std::string& label) {
  require_positive(sigma, "sigma");
  if (v.space != MarginalSpace::counts) {
    throw std::invalid_argument("gaussian_measure expects counts");
  }
  accountant.charge(label, gaussian_cost(sigma));
  MarginalVector out = v;
  for (double& x : out.values) x += sigma * rng.normal();
  return out;
}

std::vector<double> exp_mech_probabilities(std::span<const double> scores,
                                           double tau, double sensitivity) {
  if (scores.empty()) throw std::invalid_argument("no candidates to select");
  require_positive(tau, "tau");
  require_positive(sensitivity, "sensitivity");
  const double scale = tau / (2.0 * sensitivity);
  const double top = *std::max_element(scores.begin(), scores.end());
  if (!std::isfinite(top)) throw NumericError("non-finite selection score");
  std::vector<double> p(scores.size());
  double total = 0.0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    p[i] = std::exp(scale * (scores[i] - top));
    total += p[i];
  }
  for (double& x : p) x /= total;
  return p;
}

std::size_t exp_mech_sample(std::span<const double> scores, double tau,
                            double sensitivity, Rng& rng) {
  const auto p = exp_mech_probabilities(scores, tau, sensitivity);
  const double u = rng.uniform();
  double cum = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    cum += p[i];
    if (u < cum) return i;
  }
  // Rounding can leave the cumulative sum just below 1; fall back to the last
  // candidate with nonzero mass.
  for (std::size_t i = p.size(); i-- > 0;) {
    if (p[i] > 0.0) return i;
  }
  return p.size() - 1;
}

std::size_t exp_mech_select(std::span<const double> scores, double tau,
                            double sensitivity, Rng& rng,
                            PrivacyAccountant& accountant,
                            const std::string& label) {
  // Validate before charging so that bad input never consumes budget.
  exp_mech_probabilities(scores, tau, sensitivity);
  accountant.charge(label, exp_mech_cost(tau));
  return exp_mech_sample(scores, tau, sensitivity, rng);
}

}  // namespace gemplus
