#pragma once

#include <compare>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <iosfwd>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

namespace gemplus {

using Category = std::uint32_t;

enum class ColumnKind { categorical, numeric };

// One discrete column. Numeric columns remember the uniform binning used so
// that generated bin indices can be mapped back to representative values.
struct Column {
  std::string name;
  ColumnKind kind = ColumnKind::categorical;
  std::size_t cardinality = 1;
  // Categorical labels, indexed by category. An empty label is the null
  // category.
  std::vector<std::string> categories;
  double min = 0.0;
  double max = 0.0;
  std::size_t bins = 0;

  // Decoded representation of a category index: the label for categoricals,
  // the bin midpoint for numerics.
  std::string decode(Category v) const;

  bool operator==(const Column&) const = default;
};

class Schema {
 public:
  Schema() = default;
  explicit Schema(std::vector<Column> columns);

  std::size_t size() const { return columns_.size(); }
  const Column& operator[](std::size_t j) const { return columns_[j]; }
  const std::vector<Column>& columns() const { return columns_; }
  std::size_t cardinality(std::size_t j) const {
    return columns_[j].cardinality;
  }
  std::vector<std::size_t> cardinalities() const;
  std::optional<std::size_t> index_of(const std::string& name) const;

  bool operator==(const Schema&) const = default;

 private:
  std::vector<Column> columns_;
};

// Schema built from cardinalities alone, with generated names c0, c1, ...
Schema make_schema(std::span<const std::size_t> cardinalities);

// Integer-encoded dataset. Stored column-major; immutable after construction.
class DiscreteTable {
 public:
  DiscreteTable() = default;
  DiscreteTable(Schema schema, std::vector<std::vector<Category>> columns);

  static DiscreteTable from_rows(Schema schema,
                                 const std::vector<std::vector<Category>>& rows);

  const Schema& schema() const { return schema_; }
  std::size_t rows() const { return n_; }
  std::size_t cols() const { return schema_.size(); }
  std::span<const Category> column(std::size_t j) const { return columns_[j]; }
  Category at(std::size_t row, std::size_t col) const {
    return columns_[col][row];
  }

 private:
  Schema schema_;
  std::vector<std::vector<Category>> columns_;
  std::size_t n_ = 0;
};

// A marginal query: a strictly increasing set of column indices.
class MarginalQuery {
 public:
  MarginalQuery() = default;
  explicit MarginalQuery(std::vector<int> cols);
  MarginalQuery(std::initializer_list<int> cols)
      : MarginalQuery(std::vector<int>(cols)) {}

  const std::vector<int>& cols() const { return cols_; }
  std::size_t arity() const { return cols_.size(); }
  bool contains(const MarginalQuery& sub) const;
  std::string str() const;

  bool operator==(const MarginalQuery&) const = default;
  // Arity first, then lexicographic.
  std::strong_ordering operator<=>(const MarginalQuery& other) const;

 private:
  std::vector<int> cols_;
};

std::ostream& operator<<(std::ostream& os, const MarginalQuery& q);

enum class MarginalSpace { counts, normalized };

// Flattened contingency table, row-major over the query's columns in
// ascending index order (last column varies fastest).
struct MarginalVector {
  MarginalQuery query;
  std::vector<double> values;
  MarginalSpace space = MarginalSpace::counts;

  double sum() const;
};

// Row-major strides of a query's columns under the schema.
std::vector<std::size_t> query_strides(const MarginalQuery& q,
                                       const Schema& schema);

// Throws std::invalid_argument unless every index is < schema.size().
void validate_query(const MarginalQuery& q, const Schema& schema);

// --- Preprocessing ---------------------------------------------------------

struct ColumnSpec {
  std::string name;
  ColumnKind kind = ColumnKind::categorical;
  std::size_t bins = 32;
  std::optional<std::vector<std::string>> categories;
  std::optional<double> min;
  std::optional<double> max;
};

struct PreprocessSpec {
  std::vector<ColumnSpec> columns;
};

PreprocessSpec parse_preprocess_spec(const nlohmann::json& j);
PreprocessSpec read_preprocess_spec(const std::string& path);

// Uniform binning: floor((v - min) / ((max - min) / bins)) clamped to
// [0, bins - 1]. A degenerate range maps everything to bin 0.
std::vector<Category> discretize_numeric(std::span<const double> values,
                                         double min, double max,
                                         std::size_t bins);

// Reads a headered CSV and encodes it. Numeric nulls are imputed as 0 before
// binning; categorical nulls become category 0.
DiscreteTable load_table(const std::string& csv_path,
                         const PreprocessSpec& spec);
DiscreteTable load_table(std::istream& csv, const PreprocessSpec& spec);

// Re-encodes a CSV (e.g. synthetic output) under an existing schema.
// Numeric cells are binned with the schema's recorded edges.
DiscreteTable load_table_with_schema(std::istream& csv, const Schema& schema);
DiscreteTable load_table_with_schema(const std::string& csv_path,
                                     const Schema& schema);

// Writes decoded rows (labels / bin midpoints) with a header.
void write_csv(std::ostream& os, const DiscreteTable& table);

// --- Marginals -------------------------------------------------------------

// Exact counts of the query over the table. Arity 0 yields {n}.
MarginalVector evaluate_marginal(const DiscreteTable& table,
                                 const MarginalQuery& query);

// Schema JSON persistence.
nlohmann::json schema_to_json(const Schema& schema);
Schema schema_from_json(const nlohmann::json& j);

}  // namespace gemplus
