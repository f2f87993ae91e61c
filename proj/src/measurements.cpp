#include "gemplus/measurements.hpp"

#include <cmath>
#include <stdexcept>

#include "gemplus/error.hpp"

namespace gemplus {

namespace {

constexpr int kStoreFormatVersion = 1;

std::vector<MarginalQuery> strict_subsets(const MarginalQuery& q) {
  std::vector<MarginalQuery> out;
  const auto& cols = q.cols();
  const std::size_t k = cols.size();
  const std::uint64_t full = (std::uint64_t{1} << k) - 1;
  for (std::uint64_t mask = 1; mask < full; ++mask) {
    std::vector<int> sub;
    for (std::size_t i = 0; i < k; ++i) {
      if (mask & (std::uint64_t{1} << i)) sub.push_back(cols[i]);
    }
    out.emplace_back(std::move(sub));
  }
  return out;
}

}  // namespace

MarginalVector marginalize(const MarginalVector& v, const MarginalQuery& sub,
                           const Schema& schema) {
  const auto& parent = v.query;
  if (!parent.contains(sub)) {
    throw std::invalid_argument("marginalize: " + sub.str() +
                                " is not a subset of " + parent.str());
  }
  if (v.values.size() != query_size(parent, schema)) {
    throw std::invalid_argument("marginalize: vector length mismatch");
  }
  if (sub == parent) return v;

  const std::size_t k = parent.arity();
  std::vector<std::size_t> card(k);
  std::vector<std::size_t> sub_stride(k, 0);
  {
    const auto strides = query_strides(sub, schema);
    std::size_t s = 0;
    for (std::size_t i = 0; i < k; ++i) {
      card[i] = schema.cardinality(parent.cols()[i]);
      if (s < sub.arity() && sub.cols()[s] == parent.cols()[i]) {
        sub_stride[i] = strides[s++];
      }
    }
  }

  MarginalVector out{sub, std::vector<double>(query_size(sub, schema), 0.0),
                     v.space};
  // Odometer over the parent cells in row-major order.
  std::vector<std::size_t> digit(k, 0);
  std::size_t target = 0;
  for (double x : v.values) {
    out.values[target] += x;
    for (std::size_t i = k; i-- > 0;) {
      if (++digit[i] < card[i]) {
        target += sub_stride[i];
        break;
      }
      target -= sub_stride[i] * (card[i] - 1);
      digit[i] = 0;
    }
  }
  return out;
}

void MeasurementStore::accumulate(const MarginalVector& contribution,
                                  double weight) {
  auto [it, inserted] = by_query_.try_emplace(contribution.query);
  Measurement& m = it->second;
  if (inserted) {
    m.estimate = MarginalVector{contribution.query, {}, MarginalSpace::counts};
    m.weighted_sum.assign(contribution.values.size(), 0.0);
  } else if (m.weighted_sum.size() != contribution.values.size()) {
    throw std::invalid_argument("measurement length mismatch for " +
                                contribution.query.str());
  }
  for (std::size_t i = 0; i < contribution.values.size(); ++i) {
    m.weighted_sum[i] += weight * contribution.values[i];
  }
  m.weight += weight;
  m.estimate.values.resize(m.weighted_sum.size());
  for (std::size_t i = 0; i < m.weighted_sum.size(); ++i) {
    m.estimate.values[i] = m.weighted_sum[i] / m.weight;
  }
}

void MeasurementStore::record(const MarginalVector& noisy, double sigma,
                              const Schema& schema, bool closure) {
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("record: sigma must be positive");
  }
  if (noisy.space != MarginalSpace::counts) {
    throw std::invalid_argument("record: estimates are stored as counts");
  }
  if (noisy.query.arity() == 0) {
    throw std::invalid_argument("record: empty marginal is not stored");
  }
  validate_query(noisy.query, schema);
  if (noisy.values.size() != query_size(noisy.query, schema)) {
    throw std::invalid_argument("record: vector length mismatch");
  }
  const double weight =
      scheme_ == WeightScheme::inverse_sigma ? 1.0 / sigma
                                             : 1.0 / (sigma * sigma);
  accumulate(noisy, weight);
  by_query_[noisy.query].directly_measured = true;
  measured_.insert(noisy.query);
  if (!closure) return;
  for (const auto& sub : strict_subsets(noisy.query)) {
    accumulate(marginalize(noisy, sub, schema), weight);
  }
}

Workload MeasurementStore::candidates(const Workload& closure) const {
  std::set<MarginalQuery> out;
  for (const auto& q : closure) {
    if (!measured_.count(q)) out.insert(q);
  }
  return Workload(std::move(out));
}

const Measurement* MeasurementStore::find(const MarginalQuery& q) const {
  auto it = by_query_.find(q);
  return it == by_query_.end() ? nullptr : &it->second;
}

nlohmann::json MeasurementStore::to_json() const {
  nlohmann::json entries = nlohmann::json::array();
  for (const auto& [q, m] : by_query_) {
    entries.push_back({{"query", q.cols()},
                       {"estimate", m.estimate.values},
                       {"weighted_sum", m.weighted_sum},
                       {"weight", m.weight},
                       {"directly_measured", m.directly_measured}});
  }
  return {{"format_version", kStoreFormatVersion},
          {"weight_scheme", scheme_ == WeightScheme::inverse_sigma
                                ? "inverse_sigma"
                                : "inverse_variance"},
          {"entries", std::move(entries)}};
}

MeasurementStore MeasurementStore::from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kStoreFormatVersion) {
      throw ConfigError("unsupported measurement store format_version");
    }
    const auto scheme = j.at("weight_scheme").get<std::string>();
    MeasurementStore store(scheme == "inverse_variance"
                               ? WeightScheme::inverse_variance
                               : WeightScheme::inverse_sigma);
    for (const auto& e : j.at("entries")) {
      MarginalQuery q(e.at("query").get<std::vector<int>>());
      Measurement m;
      m.estimate = MarginalVector{q, e.at("estimate").get<std::vector<double>>(),
                                  MarginalSpace::counts};
      m.weighted_sum = e.at("weighted_sum").get<std::vector<double>>();
      m.weight = e.at("weight").get<double>();
      m.directly_measured = e.at("directly_measured").get<bool>();
      if (m.directly_measured) store.measured_.insert(q);
      store.by_query_.emplace(std::move(q), std::move(m));
    }
    return store;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed measurement store JSON: ") +
                      e.what());
  }
}

}  // namespace gemplus
