#pragma once

// One domain's samples plus the CSV dialect shared by every tool:
// comma separated, header required, '.' decimal point, no quoting.
//
// Dataset header: [row_id,]x1,...,xd[,y][,w]. When row_id is absent, rows
// are identified by their 0-based position.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include <Eigen/Dense>

#include "postdrift/error.hpp"

namespace postdrift {

struct Dataset {
  Eigen::MatrixXd X;  // n x d
  Eigen::VectorXd y;  // n; {0,1} for classification paths, real for the Gaussian path
  Eigen::VectorXd w;  // n; positive
  std::vector<std::string> row_ids;  // empty means positional ids

  Dataset() = default;

  Dataset(Eigen::MatrixXd features, Eigen::VectorXd labels)
      : X(std::move(features)), y(std::move(labels)), w(Eigen::VectorXd::Ones(X.rows())) {
    validate();
  }

  Dataset(Eigen::MatrixXd features, Eigen::VectorXd labels, Eigen::VectorXd weights)
      : X(std::move(features)), y(std::move(labels)), w(std::move(weights)) {
    validate();
  }

  Eigen::Index size() const { return X.rows(); }
  Eigen::Index dim() const { return X.cols(); }

  std::string row_id(Eigen::Index i) const {
    return row_ids.empty() ? std::to_string(i) : row_ids[static_cast<std::size_t>(i)];
  }

  void validate() const {
    if (y.size() != X.rows() || w.size() != X.rows())
      throw DataError("Dataset: X, y and w must have the same number of rows");
    if (!row_ids.empty() && static_cast<Eigen::Index>(row_ids.size()) != X.rows())
      throw DataError("Dataset: row_ids length does not match the number of rows");
    for (Eigen::Index i = 0; i < w.size(); ++i)
      if (!(w(i) > 0.0) || !std::isfinite(w(i)))
        throw DataError("Dataset: weight at row " + std::to_string(i) + " is not a positive finite number");
    if (!X.allFinite()) throw DataError("Dataset: non-finite covariate");
  }

  /// Throws unless every label is 0 or 1.
  void require_binary() const {
    for (Eigen::Index i = 0; i < y.size(); ++i)
      if (y(i) != 0.0 && y(i) != 1.0)
        throw DataError("Dataset: label at row " + std::to_string(i) + " is not 0 or 1");
  }

  /// Rows selected by index, preserving ids.
  Dataset subset(const std::vector<Eigen::Index>& rows) const {
    Dataset out;
    out.X.resize(static_cast<Eigen::Index>(rows.size()), X.cols());
    out.y.resize(static_cast<Eigen::Index>(rows.size()));
    out.w.resize(static_cast<Eigen::Index>(rows.size()));
    for (std::size_t k = 0; k < rows.size(); ++k) {
      const auto r = rows[k];
      const auto kk = static_cast<Eigen::Index>(k);
      out.X.row(kk) = X.row(r);
      out.y(kk) = y(r);
      out.w(kk) = w(r);
      out.row_ids.push_back(row_id(r));
    }
    return out;
  }
};

namespace csv {

/// Shortest decimal representation that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

inline std::vector<std::string_view> split(std::string_view line) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(',', start);
    if (pos == std::string_view::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view field, const std::string& where) {
  while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
  while (!field.empty() && (field.back() == ' ' || field.back() == '\r')) field.remove_suffix(1);
  double v = 0.0;
  auto [ptr, ec] = std::from_chars(field.data(), field.data() + field.size(), v);
  if (ec != std::errc() || ptr != field.data() + field.size())
    throw DataError(where + ": cannot parse '" + std::string(field) + "' as a number");
  return v;
}

/// Reads all lines; strips a trailing '\r' and skips blank lines after the header.
inline std::vector<std::string> read_lines(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty() && !lines.empty()) continue;
    lines.push_back(std::move(line));
  }
  if (lines.empty()) throw DataError("'" + path.string() + "' is empty (a header row is required)");
  return lines;
}

/// Writes to a sibling temporary file and renames it into place.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
  auto tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot write '" + tmp.string() + "'");
    out << content;
    if (!out) throw DataError("write failed for '" + tmp.string() + "'");
  }
  std::filesystem::rename(tmp, path);
}

}  // namespace csv

struct CsvLayout {
  bool row_id = false;
  bool labels = true;
  bool weights = false;
};

/// Parses a dataset CSV. Columns x1..xd must appear in order; y and w are
/// optional unless require_labels is set. Missing labels are read as 0.
inline Dataset read_dataset_csv(const std::filesystem::path& path, bool require_labels = true) {
  const auto lines = csv::read_lines(path);
  const auto header = csv::split(lines.front());
  std::size_t col = 0;
  bool has_id = false;
  if (!header.empty() && header[0] == "row_id") {
    has_id = true;
    ++col;
  }
  std::size_t d = 0;
  while (col + d < header.size() && header[col + d] == "x" + std::to_string(d + 1)) ++d;
  std::optional<std::size_t> y_col, w_col;
  for (std::size_t c = col + d; c < header.size(); ++c) {
    if (header[c] == "y" && !y_col) y_col = c;
    else if (header[c] == "w" && !w_col) w_col = c;
    else
      throw DataError(path.string() + ": unexpected header column '" + std::string(header[c]) +
                      "' (expected [row_id,]x1,...,xd[,y][,w])");
  }
  if (require_labels && !y_col) throw DataError(path.string() + ": missing 'y' column");

  const auto n = static_cast<Eigen::Index>(lines.size() - 1);
  Dataset data;
  data.X.resize(n, static_cast<Eigen::Index>(d));
  data.y = Eigen::VectorXd::Zero(n);
  data.w = Eigen::VectorXd::Ones(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto& line = lines[static_cast<std::size_t>(i) + 1];
    const auto fields = csv::split(line);
    const std::string where = path.string() + ":" + std::to_string(i + 2);
    if (fields.size() != header.size())
      throw DataError(where + ": expected " + std::to_string(header.size()) + " fields, got " +
                      std::to_string(fields.size()));
    if (has_id) data.row_ids.emplace_back(fields[0]);
    for (std::size_t j = 0; j < d; ++j)
      data.X(i, static_cast<Eigen::Index>(j)) = csv::parse_double(fields[col + j], where);
    if (y_col) data.y(i) = csv::parse_double(fields[*y_col], where);
    if (w_col) data.w(i) = csv::parse_double(fields[*w_col], where);
  }
  data.validate();
  return data;
}

inline std::string dataset_to_csv(const Dataset& data, CsvLayout layout) {
  std::string out;
  std::vector<std::string> head;
  if (layout.row_id) head.emplace_back("row_id");
  for (Eigen::Index j = 0; j < data.dim(); ++j) head.push_back("x" + std::to_string(j + 1));
  if (layout.labels) head.emplace_back("y");
  if (layout.weights) head.emplace_back("w");
  for (std::size_t k = 0; k < head.size(); ++k) {
    if (k) out += ',';
    out += head[k];
  }
  out += '\n';
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    bool first = true;
    auto put = [&](const std::string& s) {
      if (!first) out += ',';
      out += s;
      first = false;
    };
    if (layout.row_id) put(data.row_id(i));
    for (Eigen::Index j = 0; j < data.dim(); ++j) put(csv::format_double(data.X(i, j)));
    if (layout.labels) put(csv::format_double(data.y(i)));
    if (layout.weights) put(csv::format_double(data.w(i)));
    out += '\n';
  }
  return out;
}

inline void write_dataset_csv(const std::filesystem::path& path, const Dataset& data, CsvLayout layout = {}) {
  csv::write_atomic(path, dataset_to_csv(data, layout));
}

}  // namespace postdrift
