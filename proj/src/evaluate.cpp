#include "gemplus/evaluate.hpp"

#include <cmath>
#include <stdexcept>
#include <thread>

#include "gemplus/error.hpp"

namespace gemplus {

WorkloadErrorReport workload_error_report(const DiscreteTable& real,
                                          const DiscreteTable& synth,
                                          const Workload& workload,
                                          std::size_t threads) {
  if (real.schema().cardinalities() != synth.schema().cardinalities()) {
    throw DataError("real and synthetic tables have different schemas");
  }
  if (real.rows() == 0 || synth.rows() == 0) {
    throw DataError("workload error needs nonempty tables");
  }
  if (workload.empty()) throw ConfigError("workload is empty");
  validate_workload(workload, real.schema());

  const std::vector<MarginalQuery> queries(workload.begin(), workload.end());
  std::vector<double> errors(queries.size());
  const double nr = static_cast<double>(real.rows());
  const double ns = static_cast<double>(synth.rows());
  auto one = [&](std::size_t i) {
    const auto a = evaluate_marginal(real, queries[i]);
    const auto b = evaluate_marginal(synth, queries[i]);
    double e = 0.0;
    for (std::size_t c = 0; c < a.values.size(); ++c) {
      e += std::abs(a.values[c] / nr - b.values[c] / ns);
    }
    errors[i] = e;
  };
  threads = std::max<std::size_t>(1, std::min(threads, queries.size()));
  if (threads == 1) {
    for (std::size_t i = 0; i < queries.size(); ++i) one(i);
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) {
      pool.emplace_back([&, t] {
        for (std::size_t i = t; i < queries.size(); i += threads) one(i);
      });
    }
    for (auto& th : pool) th.join();
  }

  WorkloadErrorReport report;
  double total = 0.0;
  for (std::size_t i = 0; i < queries.size(); ++i) {
    report.per_query.emplace_back(queries[i], errors[i]);
    total += errors[i];
  }
  report.average = total / static_cast<double>(queries.size());
  return report;
}

double workload_error(const DiscreteTable& real, const DiscreteTable& synth,
                      const Workload& workload, std::size_t threads) {
  return workload_error_report(real, synth, workload, threads).average;
}

}  // namespace gemplus
