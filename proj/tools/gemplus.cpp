// Command-line front end: fit, generate, evaluate.

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "gemplus/commands.hpp"
#include "gemplus/error.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
  CLI::App app{"Differentially private synthetic data via marginal queries"};
  app.require_subcommand(1);

  std::string config_path;
  std::string resume_path;
  auto* fit = app.add_subcommand("fit", "train a generator under a privacy budget");
  fit->add_option("--config", config_path, "run configuration (JSON)")->required();
  fit->add_option("--resume", resume_path, "checkpoint to continue from");

  std::string model_path;
  std::optional<std::size_t> rows;
  std::uint64_t gen_seed = 0;
  std::string gen_out;
  auto* gen = app.add_subcommand("generate", "sample synthetic records from a model");
  gen->add_option("--model", model_path, "model file")->required();
  gen->add_option("--rows", rows, "number of records (default: training size)");
  gen->add_option("--seed", gen_seed, "sampling seed");
  gen->add_option("--out", gen_out, "output CSV")->required();

  std::string real_path;
  std::string synth_path;
  std::string workload;
  std::string schema_path;
  std::string eval_out;
  std::size_t threads = 1;
  auto* eval = app.add_subcommand("evaluate", "workload error between two CSV files");
  eval->add_option("--real", real_path, "real CSV")->required();
  eval->add_option("--synth", synth_path, "synthetic CSV")->required();
  eval->add_option("--workload", workload, "inline JSON or JSON file")->required();
  eval->add_option("--schema", schema_path,
                   "model, schema or preprocessing spec used to encode both files");
  eval->add_option("--threads", threads, "worker threads")->check(CLI::PositiveNumber);
  eval->add_option("--out", eval_out, "metrics JSON (default: stdout)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*fit) {
      const auto cfg = gemplus::RunConfig::load(config_path);
      std::optional<fs::path> resume;
      if (!resume_path.empty()) resume = resume_path;
      const auto s = gemplus::cmd_fit(cfg, resume);
      for (const auto& n : s.notices) std::cerr << "notice: " << n << '\n';
      std::cout << "rounds " << s.rounds << ", rho spent " << s.rho_spent
                << " of " << s.rho_total << '\n';
    } else if (*gen) {
      const auto n = gemplus::cmd_generate(model_path, rows, gen_seed, gen_out);
      std::cout << "wrote " << n << " records to " << gen_out << '\n';
    } else if (*eval) {
      std::optional<fs::path> schema;
      if (!schema_path.empty()) schema = schema_path;
      const auto metrics =
          gemplus::cmd_evaluate(real_path, synth_path, workload, schema, threads);
      if (eval_out.empty()) {
        std::cout << metrics.dump(2) << '\n';
      } else {
        gemplus::write_atomic(eval_out, metrics.dump(2) + "\n");
      }
    }
  } catch (const gemplus::ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return 2;
  } catch (const gemplus::DataError& e) {
    std::cerr << "data error: " << e.what() << '\n';
    return 3;
  } catch (const gemplus::BudgetError& e) {
    std::cerr << "budget error: " << e.what() << '\n';
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
