#pragma once

#include <cstddef>
#include <set>
#include <string>
#include <vector>

#include <json.hpp>

#include "gemplus/table.hpp"

namespace gemplus {

// A deduplicated, ordered set of marginal queries over one schema.
class Workload {
 public:
  Workload() = default;
  explicit Workload(std::set<MarginalQuery> queries)
      : queries_(std::move(queries)) {}

  const std::set<MarginalQuery>& queries() const { return queries_; }
  std::size_t size() const { return queries_.size(); }
  bool empty() const { return queries_.empty(); }
  bool contains(const MarginalQuery& q) const { return queries_.count(q) > 0; }
  std::size_t max_arity() const;
  void insert(MarginalQuery q) { queries_.insert(std::move(q)); }
  auto begin() const { return queries_.begin(); }
  auto end() const { return queries_.end(); }

  bool operator==(const Workload&) const = default;

 private:
  std::set<MarginalQuery> queries_;
};

// All C(d, k) queries of arity k.
Workload all_k_way(const Schema& schema, std::size_t k);

// Every nonempty subset of every query in `w`.
Workload downward_closure(const Workload& w);

// Product of the cardinalities of the query's columns (1 for arity 0).
std::size_t query_size(const MarginalQuery& q, const Schema& schema);

// Checks every query against the schema.
void validate_workload(const Workload& w, const Schema& schema);

// Accepts {"all_k_way": k} or a list of column-name lists.
Workload parse_workload(const nlohmann::json& spec, const Schema& schema);
nlohmann::json workload_to_json(const Workload& w, const Schema& schema);

}  // namespace gemplus
