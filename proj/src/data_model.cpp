#include "gema/data_model.hpp"

#include "gema/error.hpp"
#include "gema/rng.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

#include <json.hpp>

namespace gema {

std::string_view to_string(ColumnRole role) {
  switch (role) {
    case ColumnRole::Input: return "input";
    case ColumnRole::Output: return "output";
    case ColumnRole::Scale: return "scale";
    case ColumnRole::EntityId: return "entity_id";
    case ColumnRole::TimeId: return "time_id";
    case ColumnRole::Aux: return "aux";
  }
  return "aux";
}

ColumnRole role_from_string(std::string_view s) {
  if (s == "input") return ColumnRole::Input;
  if (s == "output") return ColumnRole::Output;
  if (s == "scale") return ColumnRole::Scale;
  if (s == "entity_id" || s == "entity") return ColumnRole::EntityId;
  if (s == "time_id" || s == "time") return ColumnRole::TimeId;
  if (s == "aux") return ColumnRole::Aux;
  throw Error(ErrorCode::InvalidArgument, "unknown column role '" + std::string(s) + "'");
}

std::string_view to_string(LogTransform t) {
  switch (t) {
    case LogTransform::None: return "none";
    case LogTransform::Log1p: return "log1p";
    case LogTransform::Log: return "log";
  }
  return "none";
}

LogTransform log_transform_from_string(std::string_view s) {
  if (s == "none") return LogTransform::None;
  if (s == "log1p") return LogTransform::Log1p;
  if (s == "log") return LogTransform::Log;
  throw Error(ErrorCode::InvalidArgument, "unknown transform '" + std::string(s) + "'");
}

// ---------------------------------------------------------------------------

DatasetFrame::DatasetFrame(std::vector<Column> columns, std::size_t n_rows)
    : columns_(std::move(columns)), n_rows_(n_rows), row_ids_(n_rows) {
  std::iota(row_ids_.begin(), row_ids_.end(), std::size_t{0});
  for (const auto& c : columns_) {
    const std::size_t len = c.is_categorical() ? c.codes.size() : c.values.size();
    if (len != n_rows_) {
      throw Error(ErrorCode::DimensionMismatch, "column '" + c.name + "' has " + std::to_string(len) +
                                                    " rows, expected " + std::to_string(n_rows_));
    }
  }
}

bool DatasetFrame::has_column(std::string_view name) const {
  return std::any_of(columns_.begin(), columns_.end(), [&](const Column& c) { return c.name == name; });
}

const Column& DatasetFrame::column(std::string_view name) const {
  for (const auto& c : columns_) {
    if (c.name == name) return c;
  }
  throw Error(ErrorCode::UnknownColumn, std::string(name));
}

Column& DatasetFrame::column(std::string_view name) {
  for (auto& c : columns_) {
    if (c.name == name) return c;
  }
  throw Error(ErrorCode::UnknownColumn, std::string(name));
}

std::vector<std::string> DatasetFrame::names_with_role(ColumnRole role) const {
  std::vector<std::string> out;
  for (const auto& c : columns_) {
    if (c.role == role) out.push_back(c.name);
  }
  return out;
}

std::optional<std::string> DatasetFrame::first_with_role(ColumnRole role) const {
  for (const auto& c : columns_) {
    if (c.role == role) return c.name;
  }
  return std::nullopt;
}

Matrix DatasetFrame::matrix(std::span<const std::string> names) const {
  Matrix m(static_cast<Eigen::Index>(n_rows_), static_cast<Eigen::Index>(names.size()));
  for (std::size_t j = 0; j < names.size(); ++j) {
    const Column& c = column(names[j]);
    if (c.is_categorical()) {
      for (std::size_t i = 0; i < n_rows_; ++i) m(i, j) = c.codes[i];
    } else {
      for (std::size_t i = 0; i < n_rows_; ++i) m(i, j) = c.values[i];
    }
  }
  return m;
}

DatasetFrame DatasetFrame::select_rows(std::span<const std::size_t> rows) const {
  std::vector<Column> cols;
  cols.reserve(columns_.size());
  for (const auto& c : columns_) {
    Column out;
    out.name = c.name;
    out.role = c.role;
    out.levels = c.levels;
    out.transform = c.transform;
    if (c.is_categorical()) {
      out.codes.reserve(rows.size());
      for (auto r : rows) out.codes.push_back(c.codes.at(r));
    } else {
      out.values.reserve(rows.size());
      for (auto r : rows) out.values.push_back(c.values.at(r));
    }
    cols.push_back(std::move(out));
  }
  DatasetFrame f(std::move(cols), rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) f.row_ids_[i] = row_ids_.at(rows[i]);
  return f;
}

void DatasetFrame::add_column(Column column) {
  const std::size_t len = column.is_categorical() ? column.codes.size() : column.values.size();
  if (len != n_rows_) throw Error(ErrorCode::DimensionMismatch, "column '" + column.name + "' length");
  if (has_column(column.name)) throw Error(ErrorCode::InvalidArgument, "duplicate column " + column.name);
  columns_.push_back(std::move(column));
}

void DatasetFrame::validate() const {
  if (names_with_role(ColumnRole::Input).empty()) {
    throw Error(ErrorCode::MissingColumn, "frame has no input column");
  }
  if (names_with_role(ColumnRole::Output).empty()) {
    throw Error(ErrorCode::MissingColumn, "frame has no output column");
  }
  for (const auto& c : columns_) {
    if (c.role == ColumnRole::Input || c.role == ColumnRole::Output || c.role == ColumnRole::Scale) {
      for (std::size_t i = 0; i < c.values.size(); ++i) {
        if (!std::isfinite(c.values[i])) {
          throw Error(ErrorCode::NonNumericCell,
                      "non-finite value at row " + std::to_string(i) + ", column " + c.name);
        }
      }
    }
    if (c.is_categorical()) {
      for (int code : c.codes) {
        if (code < 0 || static_cast<std::size_t>(code) >= c.levels.size()) {
          throw Error(ErrorCode::CodeOutOfRange, "column " + c.name);
        }
      }
    }
  }
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::vector<std::string_view> split_line(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const std::size_t pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

bool is_missing(std::string_view cell) {
  return cell.empty() || cell == "NA" || cell == "NaN" || cell == "nan" || cell == "null";
}

std::optional<double> parse_number(std::string_view cell) {
  if (!cell.empty() && cell.front() == '+') cell.remove_prefix(1);
  double v = 0.0;
  const auto* end = cell.data() + cell.size();
  auto [ptr, ec] = std::from_chars(cell.data(), end, v);
  if (ec != std::errc() || ptr != end) return std::nullopt;
  return v;
}

}  // namespace

DatasetFrame parse_csv(std::string_view text, const Schema& schema) {
  std::vector<std::string_view> lines;
  {
    std::size_t start = 0;
    while (start < text.size()) {
      std::size_t pos = text.find('\n', start);
      if (pos == std::string_view::npos) pos = text.size();
      std::string_view line = text.substr(start, pos - start);
      if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
      if (!trim(line).empty()) lines.push_back(line);
      start = pos + 1;
    }
  }
  if (lines.empty()) throw Error(ErrorCode::EmptyAfterFiltering, "empty CSV");

  std::string_view header_line = lines.front();
  if (header_line.size() >= 3 && header_line.substr(0, 3) == "\xEF\xBB\xBF") header_line.remove_prefix(3);
  std::vector<std::string> header;
  for (auto h : split_line(header_line)) header.emplace_back(trim(h));

  // Columns in header order, restricted to the schema.
  struct Slot {
    std::size_t csv_index;
    std::string name;
    ColumnRole role;
  };
  std::vector<Slot> slots;
  for (std::size_t j = 0; j < header.size(); ++j) {
    auto it = schema.find(header[j]);
    if (it != schema.end()) slots.push_back({j, header[j], it->second});
  }
  for (const auto& [name, role] : schema) {
    if (std::find(header.begin(), header.end(), name) == header.end()) {
      throw Error(ErrorCode::MissingColumn, name);
    }
  }

  std::vector<std::vector<double>> numeric(slots.size());
  std::vector<std::vector<std::string>> labels(slots.size());
  std::size_t dropped = 0;
  for (std::size_t li = 1; li < lines.size(); ++li) {
    const auto cells = split_line(lines[li]);
    std::vector<double> row_num(slots.size(), 0.0);
    std::vector<std::string> row_lab(slots.size());
    bool drop = false;
    for (std::size_t s = 0; s < slots.size(); ++s) {
      const auto& slot = slots[s];
      const std::string_view cell =
          slot.csv_index < cells.size() ? trim(cells[slot.csv_index]) : std::string_view{};
      const bool key = slot.role == ColumnRole::Input || slot.role == ColumnRole::Output ||
                       slot.role == ColumnRole::Scale;
      if (slot.role == ColumnRole::EntityId || slot.role == ColumnRole::TimeId) {
        if (is_missing(cell)) {
          drop = true;
          continue;
        }
        row_lab[s] = std::string(cell);
        continue;
      }
      if (is_missing(cell)) {
        if (key) drop = true;
        row_num[s] = std::numeric_limits<double>::quiet_NaN();
        continue;
      }
      auto v = parse_number(cell);
      if (!v) {
        throw Error(ErrorCode::NonNumericCell,
                    "row " + std::to_string(li) + ", column " + slot.name + ": '" + std::string(cell) + "'");
      }
      if (!std::isfinite(*v) && key) drop = true;
      row_num[s] = *v;
    }
    if (drop) {
      ++dropped;
      continue;
    }
    for (std::size_t s = 0; s < slots.size(); ++s) {
      numeric[s].push_back(row_num[s]);
      labels[s].push_back(std::move(row_lab[s]));
    }
  }

  const std::size_t n = numeric.empty() ? 0 : numeric.front().size();
  if (n == 0) throw Error(ErrorCode::EmptyAfterFiltering, "no complete rows");

  std::vector<Column> cols;
  for (std::size_t s = 0; s < slots.size(); ++s) {
    Column c;
    c.name = slots[s].name;
    c.role = slots[s].role;
    if (c.is_categorical()) {
      // Codes follow the sorted order of distinct labels so they do not
      // depend on row order.
      std::set<std::string> distinct(labels[s].begin(), labels[s].end());
      c.levels.assign(distinct.begin(), distinct.end());
      c.codes.reserve(n);
      for (const auto& lab : labels[s]) {
        c.codes.push_back(static_cast<int>(std::lower_bound(c.levels.begin(), c.levels.end(), lab) -
                                           c.levels.begin()));
      }
    } else {
      c.values = std::move(numeric[s]);
    }
    cols.push_back(std::move(c));
  }
  DatasetFrame frame(std::move(cols), n);
  frame.set_dropped_rows(dropped);
  frame.validate();
  return frame;
}

DatasetFrame load_csv(const std::string& path, const Schema& schema) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), schema);
}

Schema load_schema_json(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::Io, "cannot open " + path);
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::InvalidArgument, std::string("schema JSON: ") + e.what());
  }
  Schema schema;
  if (!j.contains("roles") || !j["roles"].is_object()) {
    throw Error(ErrorCode::InvalidArgument, "schema JSON needs a \"roles\" object");
  }
  for (auto& [name, role] : j["roles"].items()) schema[name] = role_from_string(role.get<std::string>());
  return schema;
}

void write_csv(const std::string& path, const std::vector<std::string>& header,
               const std::vector<std::vector<double>>& columns) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::Io, "cannot write " + path);
  for (std::size_t j = 0; j < header.size(); ++j) out << (j ? "," : "") << header[j];
  out << '\n';
  const std::size_t n = columns.empty() ? 0 : columns.front().size();
  char buf[64];
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < columns.size(); ++j) {
      const double v = columns[j][i];
      if (std::isnan(v)) {
        buf[0] = '\0';
      } else {
        std::snprintf(buf, sizeof buf, "%.17g", v);
      }
      out << (j ? "," : "") << buf;
    }
    out << '\n';
  }
}

// ---------------------------------------------------------------------------
// Transforms

double apply_log_transform(double v, LogTransform kind) {
  switch (kind) {
    case LogTransform::None: return v;
    case LogTransform::Log1p: return std::log1p(v);
    case LogTransform::Log: return std::log(v);
  }
  return v;
}

double invert_log_transform(double v, LogTransform kind) {
  switch (kind) {
    case LogTransform::None: return v;
    case LogTransform::Log1p: return std::expm1(v);
    case LogTransform::Log: return std::exp(v);
  }
  return v;
}

DatasetFrame apply_log_transform(const DatasetFrame& frame, std::span<const std::string> cols,
                                 LogTransform kind) {
  DatasetFrame out = frame;
  for (const auto& name : cols) {
    Column& c = out.column(name);
    if (c.is_categorical()) throw Error(ErrorCode::InvalidArgument, "cannot log-transform " + name);
    if (kind == LogTransform::None) continue;
    for (std::size_t i = 0; i < c.values.size(); ++i) {
      const double v = c.values[i];
      if (kind == LogTransform::Log1p ? v < 0.0 : v <= 0.0) {
        throw Error(ErrorCode::NegativeValue, "row " + std::to_string(i) + ", column " + name);
      }
    }
    for (double& v : c.values) v = apply_log_transform(v, kind);
    c.transform = kind;
  }
  return out;
}

DatasetFrame log1p_columns(const DatasetFrame& frame, std::span<const std::string> cols) {
  return apply_log_transform(frame, cols, LogTransform::Log1p);
}

DatasetFrame log_columns(const DatasetFrame& frame, std::span<const std::string> cols) {
  return apply_log_transform(frame, cols, LogTransform::Log);
}

bool Scaler::any_clamped() const {
  return std::any_of(clamped.begin(), clamped.end(), [](bool b) { return b; });
}

std::size_t Scaler::index_of(std::string_view name) const {
  for (std::size_t j = 0; j < columns.size(); ++j) {
    if (columns[j] == name) return j;
  }
  throw Error(ErrorCode::UnknownColumn, std::string(name));
}

Scaler fit_standardizer(const DatasetFrame& frame, std::span<const std::string> cols) {
  Scaler s;
  for (const auto& name : cols) {
    const Column& c = frame.column(name);
    if (c.is_categorical()) throw Error(ErrorCode::UnknownColumn, name + " is not numeric");
    const double n = static_cast<double>(c.values.size());
    const double mean = std::accumulate(c.values.begin(), c.values.end(), 0.0) / n;
    double ss = 0.0;
    for (double v : c.values) ss += (v - mean) * (v - mean);
    double sd = std::sqrt(ss / n);
    bool clamped = false;
    if (!(sd > 1e-12 * std::max(1.0, std::abs(mean)))) {
      sd = 1.0;
      clamped = true;
    }
    s.columns.push_back(name);
    s.mean.push_back(mean);
    s.std.push_back(sd);
    s.clamped.push_back(clamped);
  }
  return s;
}

DatasetFrame apply_standardizer(const DatasetFrame& frame, const Scaler& scaler) {
  DatasetFrame out = frame;
  for (std::size_t j = 0; j < scaler.columns.size(); ++j) {
    Column& c = out.column(scaler.columns[j]);
    for (double& v : c.values) v = (v - scaler.mean[j]) / scaler.std[j];
  }
  return out;
}

DatasetFrame invert_standardizer(const DatasetFrame& frame, const Scaler& scaler) {
  DatasetFrame out = frame;
  for (std::size_t j = 0; j < scaler.columns.size(); ++j) {
    Column& c = out.column(scaler.columns[j]);
    for (double& v : c.values) v = v * scaler.std[j] + scaler.mean[j];
  }
  return out;
}

Matrix WhiteningTransform::apply_columns(const Matrix& x) const {
  return w * (x.colwise() - mean);
}

WhiteningTransform fit_whitening(const Matrix& rows, double epsilon) {
  if (rows.rows() < 2) throw Error(ErrorCode::InvalidArgument, "whitening needs n >= 2");
  const Eigen::Index d = rows.cols();
  Matrix cov = covariance(rows);
  cov += epsilon * Matrix::Identity(d, d);
  Eigen::LLT<Matrix> llt(cov);
  if (llt.info() != Eigen::Success) {
    throw Error(ErrorCode::CholeskyFailure, "covariance + eps I is not positive definite");
  }
  const Matrix l = llt.matrixL();
  if (l.diagonal().minCoeff() <= 0.0) {
    throw Error(ErrorCode::CholeskyFailure, "singular Cholesky factor");
  }
  WhiteningTransform t;
  t.mean = rows.colwise().mean().transpose();
  t.w = l.triangularView<Eigen::Lower>().solve(Matrix::Identity(d, d));
  t.epsilon = epsilon;
  return t;
}

std::array<std::size_t, 3> split_sizes(std::size_t n, std::array<double, 3> fractions) {
  double sum = 0.0;
  for (double f : fractions) {
    if (!(f > 0.0)) throw Error(ErrorCode::BadFractions, "split fractions must be positive");
    sum += f;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw Error(ErrorCode::BadFractions, "split fractions must sum to 1");

  std::array<std::size_t, 3> sizes{};
  std::array<double, 3> rem{};
  std::size_t assigned = 0;
  for (int k = 0; k < 3; ++k) {
    const double quota = fractions[k] * static_cast<double>(n);
    sizes[k] = static_cast<std::size_t>(std::floor(quota + 1e-12));
    rem[k] = quota - static_cast<double>(sizes[k]);
    assigned += sizes[k];
  }
  std::array<int, 3> order{0, 1, 2};
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return rem[a] > rem[b]; });
  for (int k = 0; assigned < n && k < 3; ++k, ++assigned) sizes[order[k]] += 1;
  // Training split absorbs whatever slack the rounding leaves.
  sizes[0] = n - sizes[1] - sizes[2];
  return sizes;
}

std::array<DatasetFrame, 3> split(const DatasetFrame& frame, std::array<double, 3> fractions,
                                  std::uint64_t seed) {
  const std::size_t n = frame.n_rows();
  const auto sizes = split_sizes(n, fractions);
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  RngStream rng(seed, 0x5917);
  for (std::size_t i = n; i > 1; --i) std::swap(perm[i - 1], perm[rng.index(i)]);
  std::array<DatasetFrame, 3> out;
  std::size_t offset = 0;
  for (int k = 0; k < 3; ++k) {
    std::span<const std::size_t> part(perm.data() + offset, sizes[k]);
    out[k] = frame.select_rows(part);
    offset += sizes[k];
  }
  return out;
}

}  // namespace gema
