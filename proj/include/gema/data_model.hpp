#pragma once

#include "gema/linalg.hpp"

#include <array>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

namespace gema {

enum class ColumnRole { Input, Output, Scale, EntityId, TimeId, Aux };

std::string_view to_string(ColumnRole role);
ColumnRole role_from_string(std::string_view s);

// Monotone per-column transform recorded on the frame so it can be undone.
enum class LogTransform { None, Log1p, Log };

std::string_view to_string(LogTransform t);
LogTransform log_transform_from_string(std::string_view s);

struct Column {
  std::string name;
  ColumnRole role = ColumnRole::Aux;
  std::vector<double> values;       // numeric roles
  std::vector<int> codes;           // entity_id / time_id: dense codes
  std::vector<std::string> levels;  // code -> original label
  LogTransform transform = LogTransform::None;

  bool is_categorical() const {
    return role == ColumnRole::EntityId || role == ColumnRole::TimeId;
  }
};

// Ordered column-role mapping; order follows the CSV header.
using Schema = std::map<std::string, ColumnRole>;

/// Tabular DMU observations with typed column roles.
class DatasetFrame {
 public:
  DatasetFrame() = default;
  DatasetFrame(std::vector<Column> columns, std::size_t n_rows);

  std::size_t n_rows() const { return n_rows_; }
  const std::vector<Column>& columns() const { return columns_; }

  bool has_column(std::string_view name) const;
  const Column& column(std::string_view name) const;
  Column& column(std::string_view name);

  std::vector<std::string> names_with_role(ColumnRole role) const;
  std::optional<std::string> first_with_role(ColumnRole role) const;

  // n_rows x names.size() matrix of numeric columns.
  Matrix matrix(std::span<const std::string> names) const;

  // Original row index of every row (identity after ingestion).
  const std::vector<std::size_t>& row_ids() const { return row_ids_; }
  std::size_t dropped_rows() const { return dropped_rows_; }
  void set_dropped_rows(std::size_t n) { dropped_rows_ = n; }

  DatasetFrame select_rows(std::span<const std::size_t> rows) const;

  void add_column(Column column);

  // Checks the frame invariants; throws on violation.
  void validate() const;

 private:
  std::vector<Column> columns_;
  std::size_t n_rows_ = 0;
  std::vector<std::size_t> row_ids_;
  std::size_t dropped_rows_ = 0;
};

/// Reads a comma-separated file with a header row. Rows with a missing
/// input, output or scale cell are dropped and counted.
DatasetFrame load_csv(const std::string& path, const Schema& schema);
DatasetFrame parse_csv(std::string_view text, const Schema& schema);

Schema load_schema_json(const std::string& path);

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& columns);

DatasetFrame log1p_columns(const DatasetFrame& frame, std::span<const std::string> cols);
DatasetFrame log_columns(const DatasetFrame& frame, std::span<const std::string> cols);
DatasetFrame apply_log_transform(const DatasetFrame& frame, std::span<const std::string> cols,
                                 LogTransform kind);
double apply_log_transform(double v, LogTransform kind);
double invert_log_transform(double v, LogTransform kind);

struct Scaler {
  std::vector<std::string> columns;
  std::vector<double> mean;
  std::vector<double> std;
  std::vector<bool> clamped;  // zero-variance column, std forced to 1

  bool any_clamped() const;
  std::size_t index_of(std::string_view name) const;
};

Scaler fit_standardizer(const DatasetFrame& frame, std::span<const std::string> cols);
DatasetFrame apply_standardizer(const DatasetFrame& frame, const Scaler& scaler);
DatasetFrame invert_standardizer(const DatasetFrame& frame, const Scaler& scaler);

struct WhiteningTransform {
  Vector mean;
  Matrix w;
  double epsilon = 0.0;

  Vector apply(const Vector& x) const { return w * (x - mean); }
  // Columns are observations.
  Matrix apply_columns(const Matrix& x) const;
};

/// W = L^{-1} with L the lower Cholesky factor of cov(X) + eps I.
WhiteningTransform fit_whitening(const Matrix& rows, double epsilon);

/// Shuffled (train, val, test) partition; sizes by largest remainder with
/// the training split absorbing any rounding slack.
std::array<DatasetFrame, 3> split(const DatasetFrame& frame, std::array<double, 3> fractions,
                                  std::uint64_t seed);
std::array<std::size_t, 3> split_sizes(std::size_t n, std::array<double, 3> fractions);

}  // namespace gema
