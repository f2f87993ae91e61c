#include <cmath>
#include <random>
#include <set>

#include <doctest.h>

#include "gemplus/engine.hpp"
#include "gemplus/error.hpp"

using namespace gemplus;

namespace {

DiscreteTable coupled_table(std::uint64_t seed, std::size_t d, std::size_t k,
                            std::size_t n) {
  std::mt19937_64 g(seed);
  std::uniform_int_distribution<Category> u(0, static_cast<Category>(k - 1));
  std::bernoulli_distribution keep(0.8);
  std::vector<std::vector<Category>> cols(d);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < d; ++j) {
      cols[j].push_back(j % 2 == 1 && keep(g) ? cols[j - 1].back() : u(g));
    }
  }
  return DiscreteTable(make_schema(std::vector<std::size_t>(d, k)), std::move(cols));
}

EngineConfig fast_config(std::uint64_t seed = 0) {
  EngineConfig c;
  c.seed = seed;
  c.arch.hidden = std::vector<std::size_t>{16};
  c.arch.batch_size = 64;
  c.train.max_iters = 15;
  return c;
}

void check_accounting(const FitOutput& out, double eps, double delta) {
  CHECK(out.accountant.rho_spent() <= eps_delta_to_rho(eps, delta) + 1e-12);
  double ledger = 0.0;
  for (const auto& e : out.accountant.ledger()) ledger += e.rho;
  CHECK(std::abs(ledger - out.accountant.rho_spent()) <= 1e-12);
  double logged = 0.0;
  for (const auto& r : out.log) {
    const double expect = r.kind == "init" ? gaussian_cost(r.sigma)
                                           : round_cost({r.sigma, r.tau});
    CHECK(r.rho == doctest::Approx(expect).epsilon(1e-14));
    logged += r.rho;
  }
  CHECK(logged == doctest::Approx(out.accountant.rho_spent()).epsilon(1e-12));
}

std::string dump_log(const std::vector<RoundLog>& log) {
  std::string s;
  for (const auto& r : log) s += r.to_json().dump() + "\n";
  return s;
}

}  // namespace

TEST_CASE("aim_score") {
  const MarginalVector a{{0, 1}, {1, 2, 3, 4}, MarginalSpace::counts};
  // Frozen from sqrt(2/pi) * sigma * n_q.
  CHECK(aim_score(a, a, 1.0, 4) == doctest::Approx(-3.1915382432114616).epsilon(1e-14));
  const MarginalVector x{{0}, {0, 0, 0}, MarginalSpace::counts};
  const MarginalVector y{{0}, {5, -3, 2}, MarginalSpace::counts};
  CHECK(aim_score(x, y, 2.0, 3) == doctest::Approx(5.212692635182807).epsilon(1e-14));
  CHECK(aim_score(x, y, 0.0, 3) == 10.0);
  const MarginalVector other{{1}, {0, 0, 0}, MarginalSpace::counts};
  CHECK_THROWS(aim_score(x, other, 1.0, 3));
}

TEST_CASE("anneal_check") {
  const MarginalVector p{{0}, {0.5, 0.5}, MarginalSpace::normalized};
  const MarginalVector q{{0}, {0.75, 0.25}, MarginalSpace::normalized};
  CHECK(anneal_check(p, p, 0.0));
  CHECK_FALSE(anneal_check(p, q, 0.49));
  CHECK(anneal_check(p, q, 0.5));
}

TEST_CASE("initialization measures every 1-way marginal") {
  const auto t = coupled_table(1, 3, 3, 500);
  Engine e(t, all_k_way(t.schema(), 2), 1.0, 1e-6, fast_config());
  e.initialize();
  CHECK(e.log().size() == 3);
  for (const auto& r : e.log()) {
    CHECK(r.kind == "init");
    CHECK(r.query.arity() == 1);
    CHECK(r.tau == 0.0);
  }
  CHECK(e.accountant().ledger().size() == 3);
  CHECK(e.closed_workload().size() == 6);
  CHECK(e.planned_rounds() == 48);
}

TEST_CASE("gem_plus_fit respects the budget for any seed") {
  const auto t = coupled_table(2, 4, 3, 2000);
  const auto w = all_k_way(t.schema(), 3);
  for (double eps : {0.1, 1.0, 3.0}) {
    for (std::uint64_t seed : {1u, 2u, 3u}) {
      auto cfg = fast_config(seed);
      cfg.rounds_multiplier = 2;
      const auto out = gem_plus_fit(t, w, eps, 1e-6, cfg);
      check_accounting(out, eps, 1e-6);
    }
  }
}

TEST_CASE("a run that outlasts its budget spends it exactly") {
  const auto t = coupled_table(3, 6, 2, 1000);
  auto cfg = fast_config(4);
  cfg.rounds_multiplier = 1;
  const auto out = gem_plus_fit(t, all_k_way(t.schema(), 3), 1.0, 1e-6, cfg);
  check_accounting(out, 1.0, 1e-6);
  CHECK(out.notices.empty());
  CHECK(out.log.back().kind == "final");
  CHECK(out.accountant.remaining() <= 1e-9 * out.accountant.rho_total());
}

TEST_CASE("filtering prevents repeated selection and annealing is monotone") {
  const auto t = coupled_table(5, 5, 3, 3000);
  const auto out = gem_plus_fit(t, all_k_way(t.schema(), 2), 50.0, 1e-6, fast_config(6));
  std::set<MarginalQuery> seen;
  double sigma = INFINITY, tau = 0.0;
  for (const auto& r : out.log) {
    if (r.kind == "init") continue;
    CHECK(seen.insert(r.query).second);
    if (r.kind == "select") {
      CHECK(r.sigma <= sigma);
      CHECK(r.tau >= tau);
      sigma = r.sigma;
      tau = r.tau;
    }
  }
  CHECK(seen.size() == 10);
  REQUIRE(out.notices.size() == 1);
  CHECK(out.notices[0].find("exhausted") != std::string::npos);
}

TEST_CASE("annealing halves sigma and doubles tau") {
  const auto t = coupled_table(7, 4, 2, 500);
  auto cfg = fast_config(1);
  cfg.gamma = 1e9;  // every round anneals
  const auto out = gem_plus_fit(t, all_k_way(t.schema(), 3), 5.0, 1e-6, cfg);
  std::vector<const RoundLog*> sel;
  for (const auto& r : out.log) {
    if (r.kind == "select") sel.push_back(&r);
  }
  REQUIRE(sel.size() >= 2);
  for (std::size_t i = 1; i < sel.size(); ++i) {
    CHECK(sel[i - 1]->annealed);
    CHECK(sel[i]->sigma == doctest::Approx(sel[i - 1]->sigma / 2));
    CHECK(sel[i]->tau == doctest::Approx(sel[i - 1]->tau * 2));
  }
  check_accounting(out, 5.0, 1e-6);
}

TEST_CASE("baseline mode") {
  const auto t = coupled_table(8, 4, 3, 1000);
  const auto w = all_k_way(t.schema(), 3);
  auto cfg = fast_config(2);
  cfg.baseline_rounds = 12;
  const auto out = gem_baseline_fit(t, w, 1.0, 1e-6, cfg);
  CHECK(out.log.size() == 12);
  std::set<MarginalQuery> seen;
  for (const auto& r : out.log) {
    CHECK(r.kind == "select");
    CHECK(w.contains(r.query));
    CHECK_FALSE(r.annealed);
    CHECK(gaussian_cost(r.sigma) == doctest::Approx(exp_mech_cost(r.tau)).epsilon(1e-12));
    seen.insert(r.query);
  }
  CHECK(seen.size() < out.log.size());  // 12 rounds over 4 queries repeat
  CHECK(out.store.size() == seen.size());
  check_accounting(out, 1.0, 1e-6);
  CHECK(out.accountant.remaining() <= 1e-12);
}

TEST_CASE("runs are deterministic") {
  const auto t = coupled_table(9, 4, 3, 800);
  const auto w = all_k_way(t.schema(), 2);
  const auto a = gem_plus_fit(t, w, 2.0, 1e-6, fast_config(11));
  const auto b = gem_plus_fit(t, w, 2.0, 1e-6, fast_config(11));
  CHECK(a.model.to_json().dump() == b.model.to_json().dump());
  CHECK(dump_log(a.log) == dump_log(b.log));
  CHECK(a.accountant.to_json() == b.accountant.to_json());
  const auto c = gem_plus_fit(t, w, 2.0, 1e-6, fast_config(12));
  CHECK(a.model.to_json().dump() != c.model.to_json().dump());
}

TEST_CASE("threaded scoring matches serial scoring") {
  const auto t = coupled_table(10, 5, 3, 800);
  const auto w = all_k_way(t.schema(), 3);
  auto serial = fast_config(3);
  auto threaded = serial;
  threaded.threads = 4;
  const auto a = gem_plus_fit(t, w, 2.0, 1e-6, serial);
  const auto b = gem_plus_fit(t, w, 2.0, 1e-6, threaded);
  CHECK(dump_log(a.log) == dump_log(b.log));
}

TEST_CASE("checkpoint and resume reproduce an uninterrupted run") {
  const auto t = coupled_table(11, 4, 3, 700);
  const auto w = all_k_way(t.schema(), 2);
  auto cfg = fast_config(5);
  const auto full = gem_plus_fit(t, w, 3.0, 1e-6, cfg);

  Engine first(t, w, 3.0, 1e-6, cfg);
  first.initialize();
  first.step();
  first.step();
  const auto ckpt = nlohmann::json::parse(first.checkpoint().dump());
  Engine resumed = Engine::resume(t, ckpt);
  const auto out = resumed.run();
  CHECK(out.model.to_json().dump() == full.model.to_json().dump());
  CHECK(dump_log(out.log) == dump_log(full.log));

  const auto other = coupled_table(12, 4, 3, 700);
  CHECK_THROWS_AS(Engine::resume(other, ckpt), DataError);
}

TEST_CASE("baseline EMA resumes exactly") {
  const auto t = coupled_table(13, 3, 2, 400);
  const auto w = all_k_way(t.schema(), 2);
  auto cfg = EngineConfig::baseline(6);
  cfg.arch = fast_config().arch;
  cfg.train = fast_config().train;
  const auto full = gem_baseline_fit(t, w, 1.0, 1e-6, cfg);
  Engine e(t, w, 1.0, 1e-6, cfg);
  for (int i = 0; i < 4; ++i) e.step();
  Engine r = Engine::resume(t, nlohmann::json::parse(e.checkpoint().dump()));
  CHECK(r.run().model == full.model);
}

TEST_CASE("config JSON") {
  auto cfg = fast_config(99);
  cfg.gamma = 0.25;
  cfg.weight_scheme = WeightScheme::inverse_variance;
  const auto back = EngineConfig::from_json(nlohmann::json::parse(cfg.to_json().dump()));
  CHECK(back.to_json() == cfg.to_json());
  CHECK_THROWS_AS(EngineConfig::from_json(nlohmann::json::parse(R"({"alpah":0.5})")),
                  ConfigError);
  CHECK_THROWS_AS(EngineConfig::from_json(nlohmann::json::parse(R"({"alpha":1.5})")),
                  ConfigError);
  CHECK_THROWS_AS(EngineConfig::from_json(nlohmann::json::parse(R"({"rounds_multiplier":0})")),
                  ConfigError);
  const auto autog = EngineConfig::from_json(nlohmann::json::parse(R"({"gamma":"auto"})"));
  CHECK_FALSE(autog.gamma.has_value());
}

TEST_CASE("round log JSON round-trip") {
  RoundLog r;
  r.round = 3;
  r.kind = "select";
  r.query = MarginalQuery({0, 2});
  r.sigma = 1.5;
  r.tau = 0.1;
  r.scores = {4, -1.0, 2.0, 0.5};
  r.loss_before = 0.3;
  r.loss_after = 0.2;
  r.iters = 17;
  r.annealed = true;
  r.rho = round_cost({1.5, 0.1});
  CHECK(RoundLog::from_json(r.to_json()).to_json() == r.to_json());
}
