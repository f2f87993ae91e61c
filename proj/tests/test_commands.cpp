#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <random>
#include <sstream>

#include <doctest.h>

#include "gemplus/commands.hpp"
#include "gemplus/error.hpp"
#include "gemplus/evaluate.hpp"

using namespace gemplus;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    std::random_device rd;
    path = fs::temp_directory_path() / ("gemplus_test_" + std::to_string(rd()));
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

void write_file(const fs::path& p, const std::string& s) {
  std::ofstream(p, std::ios::binary) << s;
}

std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

void write_dataset(const fs::path& p, std::size_t n) {
  std::mt19937_64 g(1);
  std::uniform_int_distribution<int> u(0, 2);
  std::uniform_real_distribution<double> x(0.0, 100.0);
  std::ostringstream os;
  os << "color,size,score\n";
  const char* colors[] = {"red", "green", "blue"};
  for (std::size_t i = 0; i < n; ++i) {
    const int c = u(g);
    os << colors[c] << ',' << (c == 0 ? "S" : "L") << ',';
    if (i % 17 != 0) os << x(g);
    os << '\n';
  }
  write_file(p, os.str());
}

nlohmann::json base_config() {
  return {{"format_version", 1},
          {"data", "data.csv"},
          {"schema", "spec.json"},
          {"workload", {{"all_k_way", 2}}},
          {"epsilon", 2.0},
          {"delta", 1e-6},
          {"engine",
           {{"rounds_multiplier", 2},
            {"generator", {{"hidden_dims", {16}}, {"batch_size", 64}}},
            {"train", {{"max_iters", 10}}}}},
          {"output",
           {{"model", "model.json"}, {"log", "rounds.jsonl"}, {"ledger", "ledger.json"}}}};
}

void setup(const TempDir& dir) {
  write_dataset(dir.path / "data.csv", 600);
  write_file(dir.path / "spec.json",
             R"({"columns":[{"name":"color"},{"name":"size","kind":"categorical"},)"
             R"({"name":"score","kind":"numeric","bins":4}]})");
  write_file(dir.path / "run.json", base_config().dump());
}

}  // namespace

TEST_CASE("workload_error examples") {
  const std::vector<std::size_t> cards{2, 2};
  const auto s = make_schema(cards);
  const auto real = DiscreteTable::from_rows(s, {{0, 0}, {1, 1}});
  const auto synth = DiscreteTable::from_rows(s, {{0, 1}, {1, 0}});
  Workload w;
  w.insert({0, 1});
  CHECK(workload_error(real, real, w) == 0.0);
  CHECK(workload_error(real, synth, w) == 2.0);
  CHECK(workload_error(synth, real, w) == 2.0);

  const std::vector<std::size_t> one{3};
  const auto a = DiscreteTable::from_rows(make_schema(one), {{0}, {0}});
  const auto b = DiscreteTable::from_rows(make_schema(one), {{1}, {2}, {2}});
  Workload w1;
  w1.insert({0});
  CHECK(workload_error(a, b, w1) == 2.0);
  CHECK_THROWS_AS(workload_error(a, DiscreteTable(make_schema(one), {{}}), w1), DataError);
}

TEST_CASE("workload_error is symmetric and bounded") {
  std::mt19937_64 g(4);
  const std::vector<std::size_t> cards{3, 4, 2};
  const auto s = make_schema(cards);
  auto rnd = [&](std::size_t n) {
    std::vector<std::vector<Category>> cols(3);
    for (std::size_t j = 0; j < 3; ++j) {
      std::uniform_int_distribution<Category> u(0, cards[j] - 1);
      for (std::size_t i = 0; i < n; ++i) cols[j].push_back(u(g));
    }
    return DiscreteTable(s, cols);
  };
  const auto w = all_k_way(s, 2);
  for (int i = 0; i < 10; ++i) {
    const auto a = rnd(50 + i), b = rnd(70);
    const double e = workload_error(a, b, w);
    CHECK(e == doctest::Approx(workload_error(b, a, w)).epsilon(1e-15));
    CHECK(e >= 0.0);
    CHECK(e <= 2.0);
  }
}

TEST_CASE("fit, generate and evaluate through the command layer") {
  TempDir dir;
  setup(dir);
  const auto cfg = RunConfig::load(dir.path / "run.json");
  const auto summary = cmd_fit(cfg);
  CHECK(summary.rho_total == doctest::Approx(eps_delta_to_rho(2.0, 1e-6)).epsilon(1e-14));
  for (const char* f : {"model.json", "rounds.jsonl", "ledger.json"}) {
    CHECK(fs::exists(dir.path / f));
    CHECK_FALSE(fs::exists(dir.path / (std::string(f) + ".tmp")));
  }

  const auto ledger = read_json_file(dir.path / "ledger.json");
  CHECK(std::abs(ledger.at("rho_total").get<double>() - ledger.at("remaining").get<double>() -
                 ledger.at("rho_spent").get<double>()) <= 1e-12);
  CHECK(ledger.at("rho_spent").get<double>() <= eps_delta_to_rho(2.0, 1e-6) + 1e-12);

  std::istringstream log(read_file(dir.path / "rounds.jsonl"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    const auto r = RoundLog::from_json(nlohmann::json::parse(line));
    CHECK(r.rho > 0.0);
    ++lines;
  }
  CHECK(lines == summary.rounds);

  const auto synth = dir.path / "synth.csv";
  CHECK(cmd_generate(dir.path / "model.json", std::nullopt, 3, synth) == 600);
  const std::string text = read_file(synth);
  CHECK(text.rfind("color,size,score\n", 0) == 0);
  CHECK(text.find("red") != std::string::npos);

  const auto metrics = cmd_evaluate(dir.path / "data.csv", synth, R"({"all_k_way":2})",
                                    dir.path / "spec.json");
  CHECK(metrics.at("format_version") == 1);
  CHECK(metrics.at("workload_size") == 3);
  CHECK(metrics.at("per_query_errors").size() == 3);
  CHECK(metrics.at("average_error").get<double>() >= 0.0);
  CHECK(metrics.at("average_error").get<double>() <= 2.0);

  const auto via_model = cmd_evaluate(dir.path / "data.csv", synth, R"({"all_k_way":2})",
                                      dir.path / "model.json");
  CHECK(via_model.at("average_error") == metrics.at("average_error"));

  cmd_generate(dir.path / "model.json", 0, 3, dir.path / "empty.csv");
  CHECK(read_file(dir.path / "empty.csv") == "color,size,score\n");
}

TEST_CASE("evaluate on identical files is zero") {
  TempDir dir;
  write_dataset(dir.path / "a.csv", 300);
  for (const char* w : {R"({"all_k_way":1})", R"({"all_k_way":3})", R"([["score","color"]])"}) {
    const auto m = cmd_evaluate(dir.path / "a.csv", dir.path / "a.csv", w, std::nullopt);
    CHECK(m.at("average_error") == 0.0);
  }
  write_file(dir.path / "w.json", R"([["size"]])");
  CHECK(cmd_evaluate(dir.path / "a.csv", dir.path / "a.csv", (dir.path / "w.json").string(),
                     std::nullopt)
            .at("workload_size") == 1);
}

TEST_CASE("evaluate without a schema unions the labels") {
  TempDir dir;
  write_file(dir.path / "r.csv", "a\nx\nx\n");
  write_file(dir.path / "s.csv", "a\ny\nx\n");
  const auto m = cmd_evaluate(dir.path / "r.csv", dir.path / "s.csv", R"({"all_k_way":1})",
                              std::nullopt);
  CHECK(m.at("average_error").get<double>() == doctest::Approx(1.0));
}

TEST_CASE("fit is deterministic and resumable from a checkpoint") {
  TempDir dir;
  setup(dir);
  auto j = base_config();
  j["output"]["checkpoint"] = "ckpt.json";
  write_file(dir.path / "run.json", j.dump());
  const auto cfg = RunConfig::load(dir.path / "run.json");
  cmd_fit(cfg);
  const auto model1 = read_file(dir.path / "model.json");
  const auto log1 = read_file(dir.path / "rounds.jsonl");
  cmd_fit(cfg);
  CHECK(read_file(dir.path / "model.json") == model1);
  CHECK(read_file(dir.path / "rounds.jsonl") == log1);

  // Resuming a finished checkpoint rewrites the same artifacts.
  cmd_fit(cfg, dir.path / "ckpt.json");
  CHECK(read_file(dir.path / "model.json") == model1);
  CHECK(read_file(dir.path / "rounds.jsonl") == log1);
}

TEST_CASE("environment overrides the seed") {
  TempDir dir;
  setup(dir);
  const auto cfg = RunConfig::load(dir.path / "run.json");
  ::setenv("GEMPLUS_SEED", "77", 1);
  EngineConfig e = cfg.engine;
  apply_environment(e);
  CHECK(e.seed == 77);
  ::setenv("GEMPLUS_SEED", "abc", 1);
  CHECK_THROWS_AS(apply_environment(e), ConfigError);
  ::unsetenv("GEMPLUS_SEED");
}

TEST_CASE("config failures") {
  TempDir dir;
  setup(dir);
  CHECK_THROWS_AS(RunConfig::load(dir.path / "missing.json"), ConfigError);
  write_file(dir.path / "bad.json", "{not json");
  CHECK_THROWS_AS(RunConfig::load(dir.path / "bad.json"), ConfigError);
  for (const auto& [key, value] :
       std::vector<std::pair<std::string, nlohmann::json>>{
           {"epsilon", 0.0}, {"delta", 1.0}, {"format_version", 9}}) {
    auto j = base_config();
    j[key] = value;
    CHECK_THROWS_AS(RunConfig::from_json(j, dir.path), ConfigError);
  }
  auto j = base_config();
  j["data"] = "nope.csv";
  CHECK_THROWS_AS(cmd_fit(RunConfig::from_json(j, dir.path)), DataError);
  CHECK_THROWS_AS(cmd_generate(dir.path / "nope.json", 1, 0, dir.path / "x.csv"), ConfigError);
}

TEST_CASE("evaluate rejects data that does not fit the schema") {
  TempDir dir;
  setup(dir);
  cmd_fit(RunConfig::load(dir.path / "run.json"));
  write_file(dir.path / "other.csv", "color,size,score\npurple,S,1\n");
  CHECK_THROWS_AS(cmd_evaluate(dir.path / "data.csv", dir.path / "other.csv",
                               R"({"all_k_way":1})", dir.path / "model.json"),
                  DataError);
  write_file(dir.path / "cols.csv", "colour,size\nred,S\n");
  CHECK_THROWS_AS(cmd_evaluate(dir.path / "data.csv", dir.path / "cols.csv",
                               R"({"all_k_way":1})", dir.path / "model.json"),
                  DataError);
}
