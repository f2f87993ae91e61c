#include "gemplus/workload.hpp"

#include <algorithm>
#include <stdexcept>

#include "gemplus/error.hpp"

namespace gemplus {

std::size_t Workload::max_arity() const {
  std::size_t k = 0;
  for (const auto& q : queries_) k = std::max(k, q.arity());
  return k;
}

Workload all_k_way(const Schema& schema, std::size_t k) {
  const std::size_t d = schema.size();
  if (k < 1 || k > d) {
    throw std::invalid_argument("all_k_way needs 1 <= k <= d (k=" +
                                std::to_string(k) +
                                ", d=" + std::to_string(d) + ")");
  }
  std::set<MarginalQuery> out;
  std::vector<int> idx(k);
  for (std::size_t i = 0; i < k; ++i) idx[i] = static_cast<int>(i);
  const int dd = static_cast<int>(d);
  const int kk = static_cast<int>(k);
  while (true) {
    out.emplace(idx);
    int i = kk - 1;
    while (i >= 0 && idx[i] == dd - kk + i) --i;
    if (i < 0) break;
    ++idx[i];
    for (int m = i + 1; m < kk; ++m) idx[m] = idx[m - 1] + 1;
  }
  return Workload(std::move(out));
}

Workload downward_closure(const Workload& w) {
  std::set<MarginalQuery> out;
  for (const auto& q : w) {
    const auto& cols = q.cols();
    const std::size_t k = cols.size();
    if (k >= 63) throw std::invalid_argument("query arity too large");
    for (std::uint64_t mask = 1; mask < (std::uint64_t{1} << k); ++mask) {
      std::vector<int> sub;
      for (std::size_t i = 0; i < k; ++i) {
        if (mask & (std::uint64_t{1} << i)) sub.push_back(cols[i]);
      }
      out.emplace(std::move(sub));
    }
  }
  return Workload(std::move(out));
}

std::size_t query_size(const MarginalQuery& q, const Schema& schema) {
  std::size_t size = 1;
  for (int c : q.cols()) size *= schema.cardinality(static_cast<std::size_t>(c));
  return size;
}

void validate_workload(const Workload& w, const Schema& schema) {
  for (const auto& q : w) validate_query(q, schema);
}

Workload parse_workload(const nlohmann::json& spec, const Schema& schema) {
  if (spec.is_object() && spec.contains("all_k_way")) {
    const auto k = spec["all_k_way"];
    if (!k.is_number_integer() || k.get<long long>() < 1 ||
        static_cast<std::size_t>(k.get<long long>()) > schema.size()) {
      throw ConfigError("all_k_way must be an integer in [1, d]");
    }
    return all_k_way(schema, k.get<std::size_t>());
  }
  if (!spec.is_array()) {
    throw ConfigError("workload must be {\"all_k_way\": k} or a list of "
                      "column-name lists");
  }
  if (spec.empty()) throw ConfigError("workload is empty");
  std::set<MarginalQuery> out;
  for (const auto& item : spec) {
    if (!item.is_array() || item.empty()) {
      throw ConfigError("workload entries must be nonempty lists of names");
    }
    std::vector<int> cols;
    for (const auto& name : item) {
      if (!name.is_string()) {
        throw ConfigError("workload column names must be strings");
      }
      auto j = schema.index_of(name.get<std::string>());
      if (!j) {
        throw ConfigError("workload references unknown column '" +
                          name.get<std::string>() + "'");
      }
      cols.push_back(static_cast<int>(*j));
    }
    std::sort(cols.begin(), cols.end());
    if (std::adjacent_find(cols.begin(), cols.end()) != cols.end()) {
      throw ConfigError("workload query repeats a column");
    }
    out.emplace(std::move(cols));
  }
  return Workload(std::move(out));
}

nlohmann::json workload_to_json(const Workload& w, const Schema& schema) {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& q : w) {
    nlohmann::json names = nlohmann::json::array();
    for (int c : q.cols()) names.push_back(schema[c].name);
    out.push_back(std::move(names));
  }
  return out;
}

}  // namespace gemplus
