#include <cmath>
#include <numeric>

#include <doctest.h>

#include "gemplus/error.hpp"
#include "gemplus/privacy.hpp"

using namespace gemplus;

namespace {

// sqrt(rho) solves x^2 + 2 x sqrt(L) - eps = 0.
double rho_closed_form(double eps, double delta) {
  const double L = std::log(1.0 / delta);
  const double r = std::sqrt(L + eps) - std::sqrt(L);
  return r * r;
}

double total_variation(const std::vector<double>& p, const std::vector<double>& q) {
  double tv = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) tv += std::abs(p[i] - q[i]);
  return tv / 2.0;
}

std::vector<double> empirical(std::span<const double> scores, double tau, Rng& rng,
                              int draws) {
  std::vector<double> f(scores.size());
  for (int i = 0; i < draws; ++i) f[exp_mech_sample(scores, tau, 1.0, rng)] += 1.0;
  for (auto& x : f) x /= draws;
  return f;
}

std::vector<double> softmax_oracle(const std::vector<double>& s, double tau) {
  std::vector<double> p(s.size());
  double z = 0.0;
  for (std::size_t i = 0; i < s.size(); ++i) z += p[i] = std::exp(tau * s[i] / 2.0);
  for (auto& x : p) x /= z;
  return p;
}

}  // namespace

TEST_CASE("eps_delta_to_rho agrees with the closed form") {
  // Frozen from rho_closed_form.
  CHECK(eps_delta_to_rho(1.0, 1e-6) == doctest::Approx(0.017468904769123).epsilon(1e-10));
  CHECK(eps_delta_to_rho(0.1, 1e-6) == doctest::Approx(0.00018030408018).epsilon(1e-9));
  CHECK(eps_delta_to_rho(3.0, 1e-6) == doctest::Approx(0.147263890080213).epsilon(1e-10));
  for (double eps : {1e-4, 0.01, 0.5, 1.0, 2.0, 10.0, 100.0}) {
    for (double delta : {1e-9, 1e-6, 1e-3, 0.1}) {
      const double rho = eps_delta_to_rho(eps, delta);
      CHECK(std::abs(rho - rho_closed_form(eps, delta)) <= 1e-12 * std::max(1.0, rho));
      CHECK(rho + 2.0 * std::sqrt(rho * std::log(1.0 / delta)) ==
            doctest::Approx(eps).epsilon(1e-9));
      CHECK(rho_to_epsilon(rho, delta) <= eps + 1e-12);
    }
  }
}

TEST_CASE("eps_delta_to_rho is monotone and vanishes at zero") {
  CHECK(eps_delta_to_rho(1e-12, 1e-6) < 1e-20);
  double prev = 0.0;
  for (double eps = 0.05; eps < 20.0; eps *= 1.3) {
    const double r = eps_delta_to_rho(eps, 1e-6);
    CHECK(r > prev);
    prev = r;
  }
  CHECK(eps_delta_to_rho(1.0, 1e-3) > eps_delta_to_rho(1.0, 1e-6));
  CHECK_THROWS(eps_delta_to_rho(0.0, 1e-6));
  CHECK_THROWS(eps_delta_to_rho(1.0, 1.0));
}

TEST_CASE("calibrate_round") {
  const auto p = calibrate_round(0.005, 0.9);
  CHECK(p.sigma == doctest::Approx(std::sqrt(1.0 / 0.009)).epsilon(1e-14));
  CHECK(p.tau == doctest::Approx(std::sqrt(0.004)).epsilon(1e-14));
  CHECK(round_cost(p) == doctest::Approx(0.005).epsilon(1e-12));
  const auto even = calibrate_round(0.3, 0.5);
  CHECK(gaussian_cost(even.sigma) == doctest::Approx(exp_mech_cost(even.tau)).epsilon(1e-12));
  const auto twice = calibrate_round(0.01, 0.9);
  CHECK(twice.sigma == doctest::Approx(p.sigma / std::sqrt(2.0)).epsilon(1e-12));
  CHECK(twice.tau == doctest::Approx(p.tau * std::sqrt(2.0)).epsilon(1e-12));
  for (double r : {1e-8, 1e-3, 0.7, 40.0}) {
    for (double a : {0.1, 0.5, 0.9, 0.99}) {
      CHECK(std::abs(round_cost(calibrate_round(r, a)) - r) <= 1e-12 * r);
    }
  }
}

TEST_CASE("accountant") {
  PrivacyAccountant acc(1.0);
  acc.charge("zero", 0.0);
  CHECK(acc.rho_spent() == 0.0);
  acc.charge("a", 0.3);
  acc.charge("b", 0.4);
  CHECK(acc.remaining() == doctest::Approx(0.3));
  CHECK_THROWS_WITH_AS(acc.charge("too much", 0.31), doctest::Contains("too much"),
                       BudgetError);
  CHECK(acc.rho_spent() == doctest::Approx(0.7));
  CHECK(acc.ledger().size() == 3);
  CHECK_THROWS(acc.charge("negative", -1.0));
  acc.charge("slack", 0.3 + 5e-13);
  double sum = 0.0;
  for (const auto& e : acc.ledger()) sum += e.rho;
  CHECK(sum == acc.rho_spent());
  const auto back = PrivacyAccountant::from_json(acc.to_json());
  CHECK(back.rho_spent() == acc.rho_spent());
  CHECK(back.ledger().size() == acc.ledger().size());
}

TEST_CASE("gaussian_measure charges and perturbs") {
  PrivacyAccountant acc(10.0);
  Rng rng(1);
  const MarginalVector v{{0}, {1.0, 2.0}, MarginalSpace::counts};
  const auto big = gaussian_measure(v, 1e12, rng, acc, "big");
  for (double x : big.values) CHECK(std::abs(x) <= 5e12 + 2);
  CHECK(acc.rho_spent() < 1e-20);
  gaussian_measure(v, 10.0, rng, acc, "ten");
  CHECK(acc.ledger().back().rho == doctest::Approx(0.005).epsilon(1e-15));
  PrivacyAccountant tiny(0.001);
  CHECK_THROWS_AS(gaussian_measure(v, 1.0, rng, tiny, "x"), BudgetError);
  CHECK(tiny.rho_spent() == 0.0);
}

TEST_CASE("gaussian_measure mean and variance") {
  PrivacyAccountant acc(1e9);
  Rng rng(42);
  const double sigma = 3.0;
  const int reps = 100000;
  const MarginalVector v{{0}, {50.0}, MarginalSpace::counts};
  double s = 0.0, s2 = 0.0;
  for (int i = 0; i < reps; ++i) {
    const double x = gaussian_measure(v, sigma, rng, acc, "m").values[0];
    s += x;
    s2 += x * x;
  }
  const double mean = s / reps;
  const double var = s2 / reps - mean * mean;
  CHECK(std::abs(mean - 50.0) < 4.0 * sigma / std::sqrt(double(reps)));
  CHECK(std::abs(var - sigma * sigma) < 0.05 * sigma * sigma);
}

TEST_CASE("gaussian_measure is reproducible") {
  PrivacyAccountant a(1.0), b(1.0);
  Rng r1(9), r2(9);
  const MarginalVector v{{0, 1}, {1, 2, 3, 4}, MarginalSpace::counts};
  CHECK(gaussian_measure(v, 50.0, r1, a, "x").values ==
        gaussian_measure(v, 50.0, r2, b, "x").values);
}

TEST_CASE("exp_mech matches the softmax oracle") {
  Rng rng(17);
  const std::vector<double> scores{0, 1, 2, 3};
  const auto p = exp_mech_probabilities(scores, 1.0, 1.0);
  const auto oracle = softmax_oracle(scores, 1.0);
  for (std::size_t i = 0; i < p.size(); ++i) CHECK(p[i] == doctest::Approx(oracle[i]));
  CHECK(total_variation(empirical(scores, 1.0, rng, 100000), oracle) < 0.02);

  const std::vector<double> equal(5, 2.5);
  CHECK(total_variation(empirical(equal, 3.0, rng, 100000), std::vector<double>(5, 0.2)) <
        0.02);

  const std::vector<double> sharp{0.0, 1.0, 5.0, 2.0};
  int hits = 0;
  for (int i = 0; i < 1000; ++i) hits += exp_mech_sample(sharp, 1e6, 1.0, rng) == 2;
  CHECK(hits == 1000);
}

TEST_CASE("exp_mech is shift invariant and overflow safe") {
  Rng a(5), b(5);
  const std::vector<double> s{0.3, -1.0, 2.0, 0.0};
  std::vector<double> shifted;
  for (double x : s) shifted.push_back(x + 1e6);
  const auto pa = exp_mech_probabilities(s, 2.0, 1.0);
  const auto pb = exp_mech_probabilities(shifted, 2.0, 1.0);
  for (std::size_t i = 0; i < s.size(); ++i) CHECK(pa[i] == doctest::Approx(pb[i]));
  CHECK(total_variation(empirical(s, 2.0, a, 100000), empirical(shifted, 2.0, b, 100000)) <
        0.02);
}

TEST_CASE("exp_mech_select charges tau^2 / 8") {
  PrivacyAccountant acc(1.0);
  Rng rng(3);
  const std::vector<double> s{1, 2};
  exp_mech_select(s, 0.4, 1.0, rng, acc, "sel");
  CHECK(acc.rho_spent() == doctest::Approx(0.02).epsilon(1e-15));
  PrivacyAccountant none(0.01);
  CHECK_THROWS_AS(exp_mech_select(s, 0.4, 1.0, rng, none, "sel"), BudgetError);
  CHECK_THROWS(exp_mech_select(std::vector<double>{}, 0.4, 1.0, rng, acc, "sel"));
}

TEST_CASE("rng state round-trips") {
  Rng a(123);
  a.normal();
  Rng b;
  b.set_state(a.state());
  CHECK(a.normal() == b.normal());
  CHECK(a.uniform() == b.uniform());
  CHECK(derive_seed(1, 2) != derive_seed(1, 3));
  CHECK(derive_seed(1, 2) == derive_seed(1, 2));
}
