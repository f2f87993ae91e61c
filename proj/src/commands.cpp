#include "gemplus/commands.hpp"

#include <cstdlib>
#include <fstream>
#include <sstream>
#include <unordered_map>

#include "csv.hpp"
#include "gemplus/error.hpp"
#include "gemplus/evaluate.hpp"

namespace gemplus {

namespace fs = std::filesystem;

namespace {

constexpr int kRunConfigFormatVersion = 1;
constexpr int kMetricsFormatVersion = 1;
constexpr std::uint64_t kSampleStream = 21;

fs::path resolve(const fs::path& base, const std::string& p) {
  fs::path path(p);
  return path.is_absolute() ? path : base / path;
}

std::string read_text(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open '" + path.string() + "'");
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::optional<std::uint64_t> env_u64(const char* name) {
  const char* v = std::getenv(name);
  if (!v || !*v) return std::nullopt;
  char* end = nullptr;
  const unsigned long long x = std::strtoull(v, &end, 10);
  if (*end != '\0') {
    throw ConfigError(std::string(name) + " must be a nonnegative integer");
  }
  return x;
}

PreprocessSpec all_categorical(std::istream& in) {
  csv::Reader reader(in);
  const auto header = reader.next();
  in.clear();
  in.seekg(0);
  PreprocessSpec spec;
  if (!header) return spec;
  for (const auto& name : *header) {
    ColumnSpec c;
    c.name = name;
    c.kind = ColumnKind::categorical;
    spec.columns.push_back(std::move(c));
  }
  return spec;
}

// Encodes two categorical tables over the union of their labels.
std::pair<DiscreteTable, DiscreteTable> union_encode(const DiscreteTable& a,
                                                     const DiscreteTable& b) {
  std::vector<Column> cols;
  std::vector<std::vector<Category>> da(a.cols()), db(b.cols());
  for (std::size_t j = 0; j < a.cols(); ++j) {
    const auto& ca = a.schema()[j];
    const auto jb = b.schema().index_of(ca.name);
    if (!jb) throw DataError("synthetic data lacks column '" + ca.name + "'");
    const auto& cb = b.schema()[*jb];
    Column col = ca;
    std::unordered_map<std::string, Category> lookup;
    for (std::size_t v = 0; v < col.categories.size(); ++v) {
      lookup.emplace(col.categories[v], static_cast<Category>(v));
    }
    std::vector<Category> remap(cb.categories.size());
    for (std::size_t v = 0; v < cb.categories.size(); ++v) {
      auto [it, inserted] = lookup.try_emplace(
          cb.categories[v], static_cast<Category>(col.categories.size()));
      if (inserted) col.categories.push_back(cb.categories[v]);
      remap[v] = it->second;
    }
    col.cardinality = col.categories.size();
    da[j].assign(a.column(j).begin(), a.column(j).end());
    for (Category v : b.column(*jb)) db[j].push_back(remap[v]);
    cols.push_back(std::move(col));
  }
  Schema schema(std::move(cols));
  return {DiscreteTable(schema, std::move(da)),
          DiscreteTable(schema, std::move(db))};
}

nlohmann::json parse_inline_or_file(const std::string& spec) {
  try {
    return nlohmann::json::parse(spec);
  } catch (const nlohmann::json::parse_error&) {
  }
  if (!fs::exists(spec)) {
    throw ConfigError("workload '" + spec +
                      "' is neither inline JSON nor an existing file");
  }
  return read_json_file(spec);
}

}  // namespace

nlohmann::json read_json_file(const fs::path& path) {
  const std::string text = read_text(path);
  try {
    return nlohmann::json::parse(text);
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("invalid JSON in '" + path.string() + "': " + e.what());
  }
}

void write_atomic(const fs::path& path, const std::string& contents) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw ConfigError("cannot write '" + tmp.string() + "'");
    out << contents;
    out.flush();
    if (!out) throw ConfigError("write failed for '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

RunConfig RunConfig::from_json(const nlohmann::json& j, const fs::path& base) {
  try {
    if (j.value("format_version", kRunConfigFormatVersion) !=
        kRunConfigFormatVersion) {
      throw ConfigError("unsupported run config format_version");
    }
    RunConfig c;
    c.data = resolve(base, j.at("data").get<std::string>());
    c.schema = resolve(base, j.at("schema").get<std::string>());
    c.workload = j.at("workload");
    c.epsilon = j.at("epsilon").get<double>();
    c.delta = j.value("delta", c.delta);
    nlohmann::json engine = j.value("engine", nlohmann::json::object());
    if (j.contains("alpha")) engine["alpha"] = j["alpha"];
    if (j.contains("rng_seed")) engine["seed"] = j["rng_seed"];
    c.engine = EngineConfig::from_json(engine);
    const auto& out = j.at("output");
    c.output.model = resolve(base, out.at("model").get<std::string>());
    c.output.log = resolve(base, out.at("log").get<std::string>());
    c.output.ledger = resolve(base, out.at("ledger").get<std::string>());
    if (out.contains("store")) {
      c.output.store = resolve(base, out["store"].get<std::string>());
    }
    if (out.contains("checkpoint")) {
      c.output.checkpoint = resolve(base, out["checkpoint"].get<std::string>());
    }
    if (!(c.epsilon > 0.0)) throw ConfigError("epsilon must be positive");
    if (!(c.delta > 0.0 && c.delta < 1.0)) {
      throw ConfigError("delta must lie in (0, 1)");
    }
    return c;
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed run config: ") + e.what());
  }
}

RunConfig RunConfig::load(const fs::path& path) {
  if (!fs::exists(path)) {
    throw ConfigError("config file '" + path.string() + "' does not exist");
  }
  return from_json(read_json_file(path), path.parent_path());
}

void apply_environment(EngineConfig& cfg) {
  if (auto s = env_u64("GEMPLUS_SEED")) cfg.seed = *s;
  if (auto t = env_u64("GEMPLUS_THREADS")) {
    cfg.threads = std::max<std::uint64_t>(1, *t);
  }
}

FitSummary cmd_fit(const RunConfig& cfg, const std::optional<fs::path>& resume) {
  if (!fs::exists(cfg.data)) {
    throw DataError("data file '" + cfg.data.string() + "' does not exist");
  }
  if (!fs::exists(cfg.schema)) {
    throw ConfigError("preprocessing spec '" + cfg.schema.string() +
                      "' does not exist");
  }
  const DiscreteTable data =
      load_table(cfg.data.string(), read_preprocess_spec(cfg.schema.string()));
  EngineConfig engine_cfg = cfg.engine;
  apply_environment(engine_cfg);

  std::optional<Engine> engine;
  if (resume) {
    engine.emplace(Engine::resume(data, read_json_file(*resume)));
  } else {
    engine.emplace(data, parse_workload(cfg.workload, data.schema()),
                   cfg.epsilon, cfg.delta, engine_cfg);
  }

  fs::path log_tmp = cfg.output.log;
  log_tmp += ".tmp";
  std::ofstream log_out(log_tmp, std::ios::binary | std::ios::trunc);
  if (!log_out) throw ConfigError("cannot write '" + log_tmp.string() + "'");
  for (const auto& r : engine->log()) log_out << r.to_json().dump() << '\n';
  engine->on_round([&](const RoundLog& r) {
    log_out << r.to_json().dump() << '\n';
    log_out.flush();
  });

  engine->initialize();
  if (cfg.output.checkpoint) {
    write_atomic(*cfg.output.checkpoint, engine->checkpoint().dump());
  }
  while (engine->step()) {
    if (cfg.output.checkpoint) {
      write_atomic(*cfg.output.checkpoint, engine->checkpoint().dump());
    }
  }
  if (cfg.output.checkpoint) {
    write_atomic(*cfg.output.checkpoint, engine->checkpoint().dump());
  }
  FitOutput out = engine->finish();

  nlohmann::json model = out.model.to_json();
  model["records"] = data.rows();
  write_atomic(cfg.output.model, model.dump());

  nlohmann::json ledger = out.accountant.to_json();
  ledger["epsilon"] = cfg.epsilon;
  ledger["delta"] = cfg.delta;
  write_atomic(cfg.output.ledger, ledger.dump(2));
  if (cfg.output.store) write_atomic(*cfg.output.store, out.store.to_json().dump());

  log_out.close();
  if (!log_out) throw ConfigError("write failed for '" + log_tmp.string() + "'");
  fs::rename(log_tmp, cfg.output.log);

  FitSummary summary;
  summary.rounds = out.log.size();
  summary.rho_total = out.accountant.rho_total();
  summary.rho_spent = out.accountant.rho_spent();
  summary.notices = out.notices;
  return summary;
}

std::size_t cmd_generate(const fs::path& model_path,
                         std::optional<std::size_t> rows, std::uint64_t seed,
                         const fs::path& out_csv) {
  if (!fs::exists(model_path)) {
    throw ConfigError("model file '" + model_path.string() + "' does not exist");
  }
  const auto j = read_json_file(model_path);
  const GeneratorModel model = GeneratorModel::from_json(j);
  std::size_t n_out = 0;
  if (rows) {
    n_out = *rows;
  } else if (j.contains("records")) {
    n_out = j["records"].get<std::size_t>();
  } else {
    throw ConfigError("model has no record count; pass --rows");
  }
  Rng rng(derive_seed(seed, kSampleStream));
  const DiscreteTable synth = sample(model, n_out, rng);
  std::ostringstream os;
  write_csv(os, synth);
  write_atomic(out_csv, os.str());
  return n_out;
}

nlohmann::json cmd_evaluate(const fs::path& real_csv, const fs::path& synth_csv,
                            const std::string& workload_spec,
                            const std::optional<fs::path>& schema_path,
                            std::size_t threads) {
  for (const auto& p : {real_csv, synth_csv}) {
    if (!fs::exists(p)) {
      throw DataError("CSV file '" + p.string() + "' does not exist");
    }
  }
  DiscreteTable real;
  DiscreteTable synth;
  if (schema_path) {
    const auto j = read_json_file(*schema_path);
    if (j.contains("schema")) {
      const Schema schema = schema_from_json(j["schema"]);
      real = load_table_with_schema(real_csv.string(), schema);
      synth = load_table_with_schema(synth_csv.string(), schema);
    } else if (j.contains("format_version")) {
      const Schema schema = schema_from_json(j);
      real = load_table_with_schema(real_csv.string(), schema);
      synth = load_table_with_schema(synth_csv.string(), schema);
    } else {
      real = load_table(real_csv.string(), parse_preprocess_spec(j));
      synth = load_table_with_schema(synth_csv.string(), real.schema());
    }
  } else {
    std::ifstream ra(real_csv, std::ios::binary);
    std::ifstream sa(synth_csv, std::ios::binary);
    auto a = load_table(ra, all_categorical(ra));
    auto b = load_table(sa, all_categorical(sa));
    std::tie(real, synth) = union_encode(a, b);
  }

  const Workload w = parse_workload(parse_inline_or_file(workload_spec),
                                    real.schema());
  const auto report = workload_error_report(real, synth, w, threads);
  nlohmann::json per_query = nlohmann::json::array();
  for (const auto& [q, e] : report.per_query) {
    nlohmann::json names = nlohmann::json::array();
    for (int c : q.cols()) names.push_back(real.schema()[c].name);
    per_query.push_back({{"query", std::move(names)}, {"error", e}});
  }
  return {{"format_version", kMetricsFormatVersion},
          {"workload_size", w.size()},
          {"average_error", report.average},
          {"per_query_errors", std::move(per_query)}};
}

}  // namespace gemplus
