#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "gemplus/engine.hpp"

namespace gemplus {

struct OutputPaths {
  std::filesystem::path model;
  std::filesystem::path log;
  std::filesystem::path ledger;
  std::optional<std::filesystem::path> store;
  std::optional<std::filesystem::path> checkpoint;
};

// Everything `fit` needs. Relative paths in the JSON document are resolved
// against the directory holding it.
struct RunConfig {
  std::filesystem::path data;
  std::filesystem::path schema;  // preprocessing spec
  nlohmann::json workload;
  double epsilon = 1.0;
  double delta = 1e-6;
  EngineConfig engine;
  OutputPaths output;

  static RunConfig from_json(const nlohmann::json& j,
                             const std::filesystem::path& base_dir);
  static RunConfig load(const std::filesystem::path& path);
};

// GEMPLUS_SEED and GEMPLUS_THREADS override the configured seed and thread
// count when set.
void apply_environment(EngineConfig& cfg);

struct FitSummary {
  std::size_t rounds = 0;
  double rho_total = 0.0;
  double rho_spent = 0.0;
  std::vector<std::string> notices;
};

// Runs the engine and writes model, round log and ledger. Every file is
// written to a temporary sibling and renamed into place.
FitSummary cmd_fit(const RunConfig& cfg,
                   const std::optional<std::filesystem::path>& resume = {});

// Samples `rows` records (default: the training record count stored with the
// model) and writes them as decoded CSV.
std::size_t cmd_generate(const std::filesystem::path& model_path,
                         std::optional<std::size_t> rows, std::uint64_t seed,
                         const std::filesystem::path& out_csv);

// `workload` is inline JSON or a path to a JSON file. `schema` may name a
// model file, a schema document or a preprocessing spec; without it every
// column is treated as categorical.
nlohmann::json cmd_evaluate(const std::filesystem::path& real_csv,
                            const std::filesystem::path& synth_csv,
                            const std::string& workload,
                            const std::optional<std::filesystem::path>& schema,
                            std::size_t threads = 1);

// Writes `contents` to a temporary file next to `path` and renames it over
// `path`.
void write_atomic(const std::filesystem::path& path, const std::string& contents);

nlohmann::json read_json_file(const std::filesystem::path& path);

}  // namespace gemplus
