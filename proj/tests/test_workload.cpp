#include <random>

#include <doctest.h>

#include "gemplus/error.hpp"
#include "gemplus/workload.hpp"

using namespace gemplus;

namespace {

Schema schema_of(std::vector<std::size_t> cards) { return make_schema(cards); }

Workload of(std::initializer_list<MarginalQuery> qs) {
  Workload w;
  for (const auto& q : qs) w.insert(q);
  return w;
}

}  // namespace

TEST_CASE("all_k_way") {
  CHECK(all_k_way(schema_of({2, 2, 2, 2}), 1).size() == 4);
  CHECK(all_k_way(schema_of({2, 2, 2, 2}), 3) ==
        of({{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}}));
  CHECK(all_k_way(schema_of({2, 2, 2}), 3).size() == 1);
  CHECK(all_k_way(schema_of(std::vector<std::size_t>(8, 2)), 3).size() == 56);
  CHECK_THROWS(all_k_way(schema_of({2, 2}), 3));
  CHECK_THROWS(all_k_way(schema_of({2, 2}), 0));
}

TEST_CASE("downward_closure examples") {
  CHECK(downward_closure(of({{0, 1, 2}})) ==
        of({{0}, {1}, {2}, {0, 1}, {0, 2}, {1, 2}, {0, 1, 2}}));
  CHECK(downward_closure(of({{0, 1}, {1, 2}})) == of({{0}, {1}, {2}, {0, 1}, {1, 2}}));
  CHECK(downward_closure(of({{0}})) == of({{0}}));
}

TEST_CASE("downward_closure properties on random workloads") {
  std::mt19937_64 g(3);
  std::uniform_int_distribution<int> coin(0, 1);
  for (int trial = 0; trial < 50; ++trial) {
    Workload w;
    for (int k = 0; k < 4; ++k) {
      std::vector<int> cols;
      for (int c = 0; c < 7; ++c) {
        if (coin(g)) cols.push_back(c);
      }
      if (!cols.empty()) w.insert(MarginalQuery(cols));
    }
    if (w.empty()) continue;
    const auto c = downward_closure(w);
    CHECK(downward_closure(c) == c);
    for (const auto& q : w) CHECK(c.contains(q));
    for (const auto& q : c) {
      CHECK(q.arity() >= 1);
      bool covered = false;
      for (const auto& p : w) covered = covered || p.contains(q);
      CHECK(covered);
    }
  }
  for (int k = 1; k <= 6; ++k) {
    std::vector<int> cols(k);
    for (int i = 0; i < k; ++i) cols[i] = i;
    CHECK(downward_closure(of({MarginalQuery(cols)})).size() == (1u << k) - 1);
  }
}

TEST_CASE("query_size") {
  CHECK(query_size({0, 1, 2}, schema_of({4, 4, 4})) == 64);
  CHECK(query_size({}, schema_of({4, 4, 4})) == 1);
  CHECK(query_size({1}, schema_of({2, 32})) == 32);
}

TEST_CASE("workload specs") {
  const Schema s(std::vector<Column>{{"a", ColumnKind::categorical, 2, {"0", "1"}},
                                     {"b", ColumnKind::categorical, 2, {"0", "1"}},
                                     {"c", ColumnKind::categorical, 2, {"0", "1"}}});
  CHECK(parse_workload(nlohmann::json::parse(R"({"all_k_way":2})"), s) == all_k_way(s, 2));
  const auto w = parse_workload(nlohmann::json::parse(R"([["c","a"],["b"]])"), s);
  CHECK(w == of({{0, 2}, {1}}));
  CHECK(parse_workload(workload_to_json(w, s), s) == w);
  CHECK_THROWS_AS(parse_workload(nlohmann::json::parse(R"([["a","zz"]])"), s), ConfigError);
  CHECK_THROWS_AS(parse_workload(nlohmann::json::parse(R"([["a","a"]])"), s), ConfigError);
  CHECK_THROWS_AS(parse_workload(nlohmann::json::parse(R"({"all_k_way":4})"), s), ConfigError);
  CHECK_THROWS_AS(parse_workload(nlohmann::json::parse("[]"), s), ConfigError);
}
