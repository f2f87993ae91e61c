#pragma once

#include <map>
#include <set>
#include <vector>

#include <json.hpp>

#include "gemplus/table.hpp"
#include "gemplus/workload.hpp"

namespace gemplus {

// Sums `v` over the axes not in `sub`. `sub` must be a subset of v.query.
MarginalVector marginalize(const MarginalVector& v, const MarginalQuery& sub,
                           const Schema& schema);

enum class WeightScheme {
  inverse_sigma,     // 1 / sigma
  inverse_variance,  // 1 / sigma^2
};

struct Measurement {
  MarginalVector estimate;  // counts space
  double weight = 0.0;      // accumulated per-contribution weights
  bool directly_measured = false;
  // Running sum of weight * contribution; estimate == weighted_sum / weight.
  std::vector<double> weighted_sum;
};

// Noisy marginal estimates keyed by query. Repeated estimates of one query are
// merged by weighted averaging; recording a query also derives every
// sub-marginal from it.
class MeasurementStore {
 public:
  explicit MeasurementStore(WeightScheme scheme = WeightScheme::inverse_sigma)
      : scheme_(scheme) {}

  // Records a direct measurement. With `closure` set, every nonempty strict
  // subset of the query also receives a derived estimate of the same weight.
  void record(const MarginalVector& noisy, double sigma, const Schema& schema,
              bool closure = true);

  // closure minus the directly measured queries.
  Workload candidates(const Workload& closure) const;

  const std::map<MarginalQuery, Measurement>& entries() const {
    return by_query_;
  }
  const std::set<MarginalQuery>& measured() const { return measured_; }
  const Measurement* find(const MarginalQuery& q) const;
  std::size_t size() const { return by_query_.size(); }
  bool empty() const { return by_query_.empty(); }
  WeightScheme scheme() const { return scheme_; }

  nlohmann::json to_json() const;
  static MeasurementStore from_json(const nlohmann::json& j);

 private:
  void accumulate(const MarginalVector& contribution, double weight);

  WeightScheme scheme_;
  std::map<MarginalQuery, Measurement> by_query_;
  std::set<MarginalQuery> measured_;
};

}  // namespace gemplus
