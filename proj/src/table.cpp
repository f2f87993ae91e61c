#include "gemplus/table.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

#include "csv.hpp"
#include "gemplus/error.hpp"

namespace gemplus {

namespace {

constexpr int kSchemaFormatVersion = 1;

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
    s.remove_prefix(1);
  }
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t')) {
    s.remove_suffix(1);
  }
  return s;
}

bool is_null(std::string_view raw) {
  const auto s = trim(raw);
  if (s.empty()) return true;
  std::string lower(s);
  std::transform(lower.begin(), lower.end(), lower.begin(),
                 [](unsigned char c) { return std::tolower(c); });
  return lower == "null" || lower == "nan" || lower == "na";
}

std::string shortest(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

std::string where(std::size_t line, const std::string& column) {
  return "line " + std::to_string(line) + ", column '" + column + "'";
}

double parse_number(std::string_view raw, std::size_t line,
                    const std::string& column) {
  const auto s = trim(raw);
  double v = 0.0;
  const auto* first = s.data();
  const auto* last = s.data() + s.size();
  if (!s.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last) {
    throw DataError("unparseable numeric value '" + std::string(raw) +
                    "' at " + where(line, column));
  }
  if (!std::isfinite(v)) {
    throw DataError("non-finite numeric value at " + where(line, column));
  }
  return v;
}

// Header plus raw records, with the source line of each record.
struct RawCsv {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> records;
  std::vector<std::size_t> lines;
};

RawCsv read_raw(std::istream& in) {
  csv::Reader reader(in);
  RawCsv raw;
  auto header = reader.next();
  if (!header) throw DataError("CSV input is empty (missing header row)");
  raw.header = std::move(*header);
  for (auto& h : raw.header) h = std::string(trim(h));
  while (auto rec = reader.next()) {
    if (rec->size() == 1 && rec->front().empty() && raw.header.size() > 1) {
      continue;
    }
    if (rec->size() != raw.header.size()) {
      throw DataError("line " + std::to_string(reader.line()) + " has " +
                      std::to_string(rec->size()) + " fields, expected " +
                      std::to_string(raw.header.size()));
    }
    raw.records.push_back(std::move(*rec));
    raw.lines.push_back(reader.line());
  }
  return raw;
}

std::size_t header_index(const RawCsv& raw, const std::string& name) {
  auto it = std::find(raw.header.begin(), raw.header.end(), name);
  if (it == raw.header.end()) {
    throw DataError("column '" + name + "' not found in CSV header");
  }
  return static_cast<std::size_t>(it - raw.header.begin());
}

std::ifstream open_input(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw DataError("cannot open '" + path + "'");
  return in;
}

}  // namespace

// --- Column / Schema -------------------------------------------------------

std::string Column::decode(Category v) const {
  if (v >= cardinality) {
    throw std::out_of_range("category " + std::to_string(v) +
                            " out of range for column '" + name + "'");
  }
  if (kind == ColumnKind::categorical) return categories[v];
  if (max == min) return shortest(min);
  const double width = (max - min) / static_cast<double>(bins);
  return shortest(min + (static_cast<double>(v) + 0.5) * width);
}

Schema::Schema(std::vector<Column> columns) : columns_(std::move(columns)) {
  for (std::size_t j = 0; j < columns_.size(); ++j) {
    const auto& c = columns_[j];
    if (c.cardinality < 1) {
      throw std::invalid_argument("column '" + c.name +
                                  "' has zero cardinality");
    }
    if (c.kind == ColumnKind::numeric) {
      if (c.bins != c.cardinality) {
        throw std::invalid_argument("numeric column '" + c.name +
                                    "' cardinality differs from bin count");
      }
      if (!(c.min <= c.max)) {
        throw std::invalid_argument("numeric column '" + c.name +
                                    "' has min > max");
      }
    } else if (!c.categories.empty() &&
               c.categories.size() != c.cardinality) {
      throw std::invalid_argument("categorical column '" + c.name +
                                  "' label count differs from cardinality");
    }
    for (std::size_t k = 0; k < j; ++k) {
      if (columns_[k].name == c.name) {
        throw std::invalid_argument("duplicate column name '" + c.name + "'");
      }
    }
  }
}

std::vector<std::size_t> Schema::cardinalities() const {
  std::vector<std::size_t> out;
  out.reserve(columns_.size());
  for (const auto& c : columns_) out.push_back(c.cardinality);
  return out;
}

std::optional<std::size_t> Schema::index_of(const std::string& name) const {
  for (std::size_t j = 0; j < columns_.size(); ++j) {
    if (columns_[j].name == name) return j;
  }
  return std::nullopt;
}

Schema make_schema(std::span<const std::size_t> cardinalities) {
  std::vector<Column> cols;
  cols.reserve(cardinalities.size());
  for (std::size_t j = 0; j < cardinalities.size(); ++j) {
    Column c;
    c.name = "c" + std::to_string(j);
    c.cardinality = cardinalities[j];
    for (std::size_t v = 0; v < c.cardinality; ++v) {
      c.categories.push_back(std::to_string(v));
    }
    cols.push_back(std::move(c));
  }
  return Schema(std::move(cols));
}

// --- DiscreteTable ---------------------------------------------------------

DiscreteTable::DiscreteTable(Schema schema,
                             std::vector<std::vector<Category>> columns)
    : schema_(std::move(schema)), columns_(std::move(columns)) {
  if (columns_.size() != schema_.size()) {
    throw std::invalid_argument("column count does not match schema");
  }
  n_ = columns_.empty() ? 0 : columns_.front().size();
  for (std::size_t j = 0; j < columns_.size(); ++j) {
    if (columns_[j].size() != n_) {
      throw std::invalid_argument("ragged columns");
    }
    const auto k = schema_.cardinality(j);
    for (std::size_t i = 0; i < n_; ++i) {
      if (columns_[j][i] >= k) {
        throw DataError("value " + std::to_string(columns_[j][i]) +
                        " out of domain in row " + std::to_string(i) +
                        ", column '" + schema_[j].name + "'");
      }
    }
  }
}

DiscreteTable DiscreteTable::from_rows(
    Schema schema, const std::vector<std::vector<Category>>& rows) {
  std::vector<std::vector<Category>> cols(schema.size());
  for (auto& c : cols) c.reserve(rows.size());
  for (const auto& row : rows) {
    if (row.size() != schema.size()) {
      throw std::invalid_argument("row width does not match schema");
    }
    for (std::size_t j = 0; j < row.size(); ++j) cols[j].push_back(row[j]);
  }
  return DiscreteTable(std::move(schema), std::move(cols));
}

// --- MarginalQuery ---------------------------------------------------------

MarginalQuery::MarginalQuery(std::vector<int> cols) : cols_(std::move(cols)) {
  for (std::size_t i = 0; i < cols_.size(); ++i) {
    if (cols_[i] < 0) throw std::invalid_argument("negative column index");
    if (i > 0 && cols_[i] <= cols_[i - 1]) {
      throw std::invalid_argument("query columns must be strictly increasing");
    }
  }
}

bool MarginalQuery::contains(const MarginalQuery& sub) const {
  return std::includes(cols_.begin(), cols_.end(), sub.cols_.begin(),
                       sub.cols_.end());
}

std::string MarginalQuery::str() const {
  std::ostringstream os;
  os << *this;
  return os.str();
}

std::strong_ordering MarginalQuery::operator<=>(
    const MarginalQuery& other) const {
  if (auto c = cols_.size() <=> other.cols_.size(); c != 0) return c;
  return cols_ <=> other.cols_;
}

std::ostream& operator<<(std::ostream& os, const MarginalQuery& q) {
  os << '(';
  for (std::size_t i = 0; i < q.cols().size(); ++i) {
    if (i) os << ',';
    os << q.cols()[i];
  }
  return os << ')';
}

double MarginalVector::sum() const {
  return std::accumulate(values.begin(), values.end(), 0.0);
}

std::vector<std::size_t> query_strides(const MarginalQuery& q,
                                       const Schema& schema) {
  std::vector<std::size_t> strides(q.arity());
  std::size_t s = 1;
  for (std::size_t i = q.arity(); i-- > 0;) {
    strides[i] = s;
    s *= schema.cardinality(static_cast<std::size_t>(q.cols()[i]));
  }
  return strides;
}

void validate_query(const MarginalQuery& q, const Schema& schema) {
  for (int c : q.cols()) {
    if (static_cast<std::size_t>(c) >= schema.size()) {
      throw std::invalid_argument("query " + q.str() +
                                  " references a column outside the schema");
    }
  }
}

// --- Preprocessing ---------------------------------------------------------

PreprocessSpec parse_preprocess_spec(const nlohmann::json& j) {
  if (!j.is_object() || !j.contains("columns") || !j["columns"].is_array()) {
    throw ConfigError("preprocessing spec must be an object with a "
                      "'columns' array");
  }
  PreprocessSpec spec;
  for (const auto& c : j["columns"]) {
    ColumnSpec cs;
    try {
      cs.name = c.at("name").get<std::string>();
      const auto kind = c.value("kind", std::string("categorical"));
      if (kind == "categorical") {
        cs.kind = ColumnKind::categorical;
        if (c.contains("categories")) {
          cs.categories = c["categories"].get<std::vector<std::string>>();
          if (cs.categories->empty()) {
            throw ConfigError("column '" + cs.name +
                              "' has an empty category list");
          }
        }
      } else if (kind == "numeric") {
        cs.kind = ColumnKind::numeric;
        cs.bins = c.value("bins", std::size_t{32});
        if (cs.bins < 1) {
          throw ConfigError("column '" + cs.name + "' needs bins >= 1");
        }
        if (c.contains("min")) cs.min = c["min"].get<double>();
        if (c.contains("max")) cs.max = c["max"].get<double>();
      } else {
        throw ConfigError("column '" + cs.name + "' has unknown kind '" +
                          kind + "'");
      }
    } catch (const nlohmann::json::exception& e) {
      throw ConfigError(std::string("malformed column spec: ") + e.what());
    }
    spec.columns.push_back(std::move(cs));
  }
  return spec;
}

PreprocessSpec read_preprocess_spec(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open preprocessing spec '" + path + "'");
  try {
    return parse_preprocess_spec(nlohmann::json::parse(in));
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("invalid JSON in '" + path + "': " + e.what());
  }
}

std::vector<Category> discretize_numeric(std::span<const double> values,
                                         double min, double max,
                                         std::size_t bins) {
  if (!(min <= max)) throw std::invalid_argument("min must not exceed max");
  if (bins < 1) throw std::invalid_argument("bins must be >= 1");
  std::vector<Category> out;
  out.reserve(values.size());
  const double width = (max - min) / static_cast<double>(bins);
  const auto top = static_cast<double>(bins - 1);
  for (double v : values) {
    if (!std::isfinite(v)) {
      throw DataError("non-finite value passed to discretize_numeric");
    }
    if (max == min) {
      out.push_back(0);
      continue;
    }
    const double b = std::clamp(std::floor((v - min) / width), 0.0, top);
    out.push_back(static_cast<Category>(b));
  }
  return out;
}

DiscreteTable load_table(std::istream& in, const PreprocessSpec& spec) {
  const RawCsv raw = read_raw(in);
  const std::size_t n = raw.records.size();
  std::vector<Column> columns;
  std::vector<std::vector<Category>> data;

  for (const auto& cs : spec.columns) {
    const std::size_t src = header_index(raw, cs.name);
    Column col;
    col.name = cs.name;
    col.kind = cs.kind;

    if (cs.kind == ColumnKind::numeric) {
      std::vector<double> values(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& cell = raw.records[i][src];
        values[i] = is_null(cell) ? 0.0 : parse_number(cell, raw.lines[i],
                                                       cs.name);
      }
      double lo = 0.0, hi = 0.0;
      if (!values.empty()) {
        auto [mn, mx] = std::minmax_element(values.begin(), values.end());
        lo = *mn;
        hi = *mx;
      }
      col.min = cs.min.value_or(lo);
      col.max = cs.max.value_or(hi);
      if (!(col.min <= col.max)) {
        throw ConfigError("column '" + cs.name + "' has min > max");
      }
      col.bins = cs.bins;
      col.cardinality = cs.bins;
      data.push_back(discretize_numeric(values, col.min, col.max, col.bins));
    } else {
      std::vector<Category> idx(n);
      if (cs.categories) {
        col.categories = *cs.categories;
        std::unordered_map<std::string, Category> lookup;
        for (std::size_t v = 0; v < col.categories.size(); ++v) {
          lookup.emplace(col.categories[v], static_cast<Category>(v));
        }
        const bool has_null = col.categories.front().empty();
        for (std::size_t i = 0; i < n; ++i) {
          const auto& cell = raw.records[i][src];
          if (is_null(cell)) {
            if (!has_null) {
              throw DataError("null value at " + where(raw.lines[i], cs.name) +
                              " but the category list has no leading null "
                              "entry");
            }
            idx[i] = 0;
            continue;
          }
          auto it = lookup.find(std::string(trim(cell)));
          if (it == lookup.end()) {
            throw DataError("value '" + cell + "' at " +
                            where(raw.lines[i], cs.name) +
                            " is not in the declared category list");
          }
          idx[i] = it->second;
        }
      } else {
        const bool any_null = std::any_of(
            raw.records.begin(), raw.records.end(),
            [src](const auto& r) { return is_null(r[src]); });
        std::unordered_map<std::string, Category> lookup;
        if (any_null) col.categories.emplace_back();
        for (std::size_t i = 0; i < n; ++i) {
          const auto& cell = raw.records[i][src];
          if (is_null(cell)) {
            idx[i] = 0;
            continue;
          }
          std::string key(trim(cell));
          auto [it, inserted] = lookup.try_emplace(
              key, static_cast<Category>(col.categories.size()));
          if (inserted) col.categories.push_back(key);
          idx[i] = it->second;
        }
        if (col.categories.empty()) col.categories.emplace_back();
      }
      col.cardinality = col.categories.size();
      data.push_back(std::move(idx));
    }
    columns.push_back(std::move(col));
  }
  return DiscreteTable(Schema(std::move(columns)), std::move(data));
}

DiscreteTable load_table(const std::string& csv_path,
                         const PreprocessSpec& spec) {
  auto in = open_input(csv_path);
  return load_table(in, spec);
}

DiscreteTable load_table_with_schema(std::istream& in, const Schema& schema) {
  const RawCsv raw = read_raw(in);
  const std::size_t n = raw.records.size();
  std::vector<std::vector<Category>> data;
  for (const auto& col : schema.columns()) {
    const std::size_t src = header_index(raw, col.name);
    std::vector<Category> idx(n);
    if (col.kind == ColumnKind::numeric) {
      std::vector<double> values(n);
      for (std::size_t i = 0; i < n; ++i) {
        const auto& cell = raw.records[i][src];
        values[i] = is_null(cell) ? 0.0 : parse_number(cell, raw.lines[i],
                                                       col.name);
      }
      idx = discretize_numeric(values, col.min, col.max, col.bins);
    } else {
      std::unordered_map<std::string, Category> lookup;
      for (std::size_t v = 0; v < col.categories.size(); ++v) {
        lookup.emplace(col.categories[v], static_cast<Category>(v));
      }
      for (std::size_t i = 0; i < n; ++i) {
        const auto& cell = raw.records[i][src];
        const std::string key = is_null(cell) ? std::string()
                                              : std::string(trim(cell));
        auto it = lookup.find(key);
        if (it == lookup.end()) {
          throw DataError("value '" + cell + "' at " +
                          where(raw.lines[i], col.name) +
                          " is not a category of the schema");
        }
        idx[i] = it->second;
      }
    }
    data.push_back(std::move(idx));
  }
  return DiscreteTable(schema, std::move(data));
}

DiscreteTable load_table_with_schema(const std::string& csv_path,
                                     const Schema& schema) {
  auto in = open_input(csv_path);
  return load_table_with_schema(in, schema);
}

void write_csv(std::ostream& os, const DiscreteTable& table) {
  const auto& schema = table.schema();
  std::vector<std::string> fields;
  for (const auto& c : schema.columns()) fields.push_back(c.name);
  csv::write_record(os, fields);
  for (std::size_t i = 0; i < table.rows(); ++i) {
    for (std::size_t j = 0; j < table.cols(); ++j) {
      fields[j] = schema[j].decode(table.at(i, j));
    }
    csv::write_record(os, fields);
  }
}

// --- Marginals -------------------------------------------------------------

MarginalVector evaluate_marginal(const DiscreteTable& table,
                                 const MarginalQuery& query) {
  const auto& schema = table.schema();
  validate_query(query, schema);
  const auto strides = query_strides(query, schema);
  std::size_t size = 1;
  for (int c : query.cols()) size *= schema.cardinality(c);

  std::vector<std::uint64_t> counts(size, 0);
  const std::size_t n = table.rows();
  if (query.arity() == 0) {
    counts[0] = n;
  } else if (query.arity() == 1) {
    for (Category v : table.column(query.cols()[0])) ++counts[v];
  } else {
    // Flat indices are built a block of rows at a time, one column per pass.
    constexpr std::size_t kBlock = 4096;
    std::vector<std::size_t> flat(kBlock);
    for (std::size_t start = 0; start < n; start += kBlock) {
      const std::size_t len = std::min(kBlock, n - start);
      std::fill_n(flat.begin(), len, 0);
      for (std::size_t i = 0; i < query.arity(); ++i) {
        const auto col = table.column(query.cols()[i]).subspan(start, len);
        const std::size_t stride = strides[i];
        for (std::size_t r = 0; r < len; ++r) flat[r] += col[r] * stride;
      }
      for (std::size_t r = 0; r < len; ++r) ++counts[flat[r]];
    }
  }
  MarginalVector out{query, std::vector<double>(counts.begin(), counts.end()),
                     MarginalSpace::counts};
  return out;
}

// --- JSON ------------------------------------------------------------------

nlohmann::json schema_to_json(const Schema& schema) {
  nlohmann::json cols = nlohmann::json::array();
  for (const auto& c : schema.columns()) {
    nlohmann::json jc{{"name", c.name}, {"cardinality", c.cardinality}};
    if (c.kind == ColumnKind::numeric) {
      jc["kind"] = "numeric";
      jc["min"] = c.min;
      jc["max"] = c.max;
      jc["bins"] = c.bins;
    } else {
      jc["kind"] = "categorical";
      jc["categories"] = c.categories;
    }
    cols.push_back(std::move(jc));
  }
  return {{"format_version", kSchemaFormatVersion}, {"columns", cols}};
}

Schema schema_from_json(const nlohmann::json& j) {
  try {
    if (j.at("format_version").get<int>() != kSchemaFormatVersion) {
      throw ConfigError("unsupported schema format_version");
    }
    std::vector<Column> cols;
    for (const auto& jc : j.at("columns")) {
      Column c;
      c.name = jc.at("name").get<std::string>();
      c.cardinality = jc.at("cardinality").get<std::size_t>();
      const auto kind = jc.at("kind").get<std::string>();
      if (kind == "numeric") {
        c.kind = ColumnKind::numeric;
        c.min = jc.at("min").get<double>();
        c.max = jc.at("max").get<double>();
        c.bins = jc.at("bins").get<std::size_t>();
      } else if (kind == "categorical") {
        c.kind = ColumnKind::categorical;
        c.categories = jc.at("categories").get<std::vector<std::string>>();
      } else {
        throw ConfigError("unknown column kind '" + kind + "'");
      }
      cols.push_back(std::move(c));
    }
    return Schema(std::move(cols));
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed schema JSON: ") + e.what());
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("invalid schema: ") + e.what());
  }
}

}  // namespace gemplus
