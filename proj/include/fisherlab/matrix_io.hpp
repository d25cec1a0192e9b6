#pragma once

#include <cctype>
#include <cstdio>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fisherlab/matgeom.hpp"

namespace fisherlab {

/// Shortest form that round-trips: 17 significant digits.
inline std::string format_real(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

inline std::vector<double> parse_csv_reals(const std::string& line, std::size_t line_no) {
  std::vector<double> out;
  std::stringstream ss(line);
  std::string cell;
  while (std::getline(ss, cell, ',')) {
    std::size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(cell, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    while (used < cell.size() && std::isspace(static_cast<unsigned char>(cell[used]))) ++used;
    if (used == 0 || used != cell.size()) {
      throw std::runtime_error("line " + std::to_string(line_no) + ": malformed number '" + cell + "'");
    }
    out.push_back(v);
  }
  return out;
}

/// Writes "dim=<d>" followed by d row-major lines.
inline void write_matrix_csv(std::ostream& os, const Matrix& m) {
  if (m.rows() != m.cols()) throw std::invalid_argument("write_matrix_csv: matrix not square");
  os << "dim=" << m.rows() << '\n';
  for (Index i = 0; i < m.rows(); ++i) {
    for (Index j = 0; j < m.cols(); ++j) os << (j ? "," : "") << format_real(m(i, j));
    os << '\n';
  }
}

inline void write_matrix_csv(std::ostream& os, const SymMatrix& m) { write_matrix_csv(os, m.mat()); }

inline Matrix read_matrix_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line.rfind("dim=", 0) != 0) {
    throw std::runtime_error("matrix csv: missing 'dim=<d>' header");
  }
  const int d = std::stoi(line.substr(4));
  if (d <= 0) throw std::runtime_error("matrix csv: dimension must be positive");
  Matrix m(d, d);
  for (int i = 0; i < d; ++i) {
    if (!std::getline(is, line)) throw std::runtime_error("matrix csv: expected " + std::to_string(d) + " rows");
    const auto row = parse_csv_reals(line, static_cast<std::size_t>(i) + 2);
    if (static_cast<int>(row.size()) != d) {
      throw std::runtime_error("matrix csv: line " + std::to_string(i + 2) + " has " +
                               std::to_string(row.size()) + " entries, expected " + std::to_string(d));
    }
    for (int j = 0; j < d; ++j) m(i, j) = row[static_cast<std::size_t>(j)];
  }
  return m;
}

inline Matrix read_matrix_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_matrix_csv(in);
}

}  // namespace fisherlab
