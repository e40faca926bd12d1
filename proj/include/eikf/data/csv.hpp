#pragma once

// Delimited-text readers and writers for series, mask, distance and matrix
// files. All files are comma separated with a header row.

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "eikf/numeric/tensor.hpp"

namespace eikf {

class ParseError : public std::runtime_error {
public:
  ParseError(const std::string& msg, std::size_t row = 0, std::size_t col = 0)
      : std::runtime_error(msg), row_(row), col_(col) {}
  /// 1-based data row (header excluded) and column; 0 when not applicable.
  std::size_t row() const noexcept { return row_; }
  std::size_t col() const noexcept { return col_; }

private:
  std::size_t row_, col_;
};

/// Time-major series: values is T x n (rows are time steps).
struct RawSeries {
  Tensor values;
  std::vector<std::string> sensor_ids;

  std::size_t steps() const { return values.rows(); }
  std::size_t sensors() const { return values.cols(); }
};

namespace csv {

inline std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  std::istringstream is(line);
  while (std::getline(is, cell, ',')) out.push_back(cell);
  if (!line.empty() && line.back() == ',') out.emplace_back();
  for (auto& c : out) {
    while (!c.empty() && (c.back() == '\r' || c.back() == ' ' || c.back() == '\t')) c.pop_back();
    std::size_t b = 0;
    while (b < c.size() && (c[b] == ' ' || c[b] == '\t')) ++b;
    c.erase(0, b);
  }
  return out;
}

inline bool parse_double(const std::string& s, double& out) {
  if (s.empty()) return false;
  const char* begin = s.c_str();
  char* end = nullptr;
  errno = 0;
  out = std::strtod(begin, &end);
  return end == begin + s.size() && errno != ERANGE;
}

/// Reads a header + numeric table. Rejects ragged rows and non-numeric cells,
/// reporting the 1-based data row and column.
inline RawSeries read_table(std::istream& in, const std::string& source, std::size_t min_cols = 1) {
  std::string line;
  if (!std::getline(in, line) || split_line(line).empty() || line.find_first_not_of(" \t\r") == std::string::npos)
    throw ParseError(source + ": empty file");
  RawSeries s;
  s.sensor_ids = split_line(line);
  const std::size_t cols = s.sensor_ids.size();
  if (cols < min_cols)
    throw ParseError(source + ": expected at least " + std::to_string(min_cols) + " columns, found " +
                     std::to_string(cols), 0, cols);
  std::vector<double> values;
  std::size_t row = 0;
  while (std::getline(in, line)) {
    if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
    ++row;
    const auto cells = split_line(line);
    if (cells.size() != cols)
      throw ParseError(source + ": row " + std::to_string(row) + " has " + std::to_string(cells.size()) +
                           " cells, header has " + std::to_string(cols), row, cells.size());
    for (std::size_t c = 0; c < cols; ++c) {
      double v = 0.0;
      if (!parse_double(cells[c], v) || !std::isfinite(v))
        throw ParseError(source + ": non-numeric cell '" + cells[c] + "' at (" + std::to_string(row) + "," +
                             std::to_string(c + 1) + ")", row, c + 1);
      values.push_back(v);
    }
  }
  if (row == 0) throw ParseError(source + ": no data rows");
  s.values = Tensor({row, cols}, std::move(values));
  return s;
}

inline std::ifstream open_in(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ParseError("cannot open '" + path + "'");
  return f;
}

inline std::ofstream open_out(const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot write '" + path + "'");
  return f;
}

/// Shortest decimal that round-trips to the same double.
inline std::string format_double(double v) {
  char buf[32];
  for (int prec = 1; prec <= 17; ++prec) {
    std::snprintf(buf, sizeof buf, "%.*g", prec, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline void write_table(std::ostream& out, const Tensor& values, const std::vector<std::string>& header) {
  if (values.rank() != 2 || header.size() != values.cols())
    throw ShapeError("write_table: header of " + std::to_string(header.size()) + " for values " +
                     shape_str(values.shape()));
  for (std::size_t c = 0; c < header.size(); ++c) out << (c ? "," : "") << header[c];
  out << '\n';
  for (std::size_t r = 0; r < values.rows(); ++r) {
    for (std::size_t c = 0; c < values.cols(); ++c) out << (c ? "," : "") << format_double(values(r, c));
    out << '\n';
  }
}

}  // namespace csv

/// Series file: header of sensor ids, one row per time step, at least two sensors.
inline RawSeries load_series(std::istream& in, const std::string& source = "<stream>") {
  return csv::read_table(in, source, 2);
}

inline RawSeries load_series(const std::string& path) {
  auto f = csv::open_in(path);
  return load_series(f, path);
}

inline void save_series(const std::string& path, const RawSeries& s) {
  auto f = csv::open_out(path);
  csv::write_table(f, s.values, s.sensor_ids);
}

/// Mask file: same layout as a series file with cells in {0, 1}.
inline Tensor load_mask(const std::string& path, const std::vector<std::string>* expected_ids = nullptr) {
  auto f = csv::open_in(path);
  RawSeries s = csv::read_table(f, path, 1);
  if (expected_ids && s.sensor_ids != *expected_ids) throw ParseError(path + ": mask header does not match series");
  for (std::size_t i = 0; i < s.values.size(); ++i)
    if (s.values[i] != 0.0 && s.values[i] != 1.0)
      throw ParseError(path + ": mask cell not in {0,1} at (" + std::to_string(i / s.values.cols() + 1) + "," +
                           std::to_string(i % s.values.cols() + 1) + ")",
                       i / s.values.cols() + 1, i % s.values.cols() + 1);
  return s.values;
}

}  // namespace eikf
