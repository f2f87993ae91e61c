#pragma once

#include <utility>
#include <vector>

#include "gemplus/table.hpp"
#include "gemplus/workload.hpp"

namespace gemplus {

struct WorkloadErrorReport {
  std::vector<std::pair<MarginalQuery, double>> per_query;
  double average = 0.0;
};

// Per query: || q(real)/n_real - q(synth)/n_synth ||_1, each in [0, 2].
WorkloadErrorReport workload_error_report(const DiscreteTable& real,
                                          const DiscreteTable& synth,
                                          const Workload& workload,
                                          std::size_t threads = 1);

// Average of the per-query errors.
double workload_error(const DiscreteTable& real, const DiscreteTable& synth,
                      const Workload& workload, std::size_t threads = 1);

}  // namespace gemplus
