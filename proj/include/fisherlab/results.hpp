#pragma once

#include <cmath>
#include <fstream>
#include <istream>
#include <ostream>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "fisherlab/matrix_io.hpp"
#include "fisherlab/params.hpp"

namespace fisherlab {

/// empirical: simulated estimate; analytic: solver output; ratio:
/// empirical / analytic for the same quantity.
enum class Series { empirical, analytic, ratio };

inline const char* to_string(Series s) {
  switch (s) {
    case Series::empirical: return "empirical";
    case Series::analytic: return "analytic";
    case Series::ratio: return "ratio";
  }
  return "?";
}

inline Series parse_series(const std::string& s) {
  if (s == "empirical") return Series::empirical;
  if (s == "analytic") return Series::analytic;
  if (s == "ratio") return Series::ratio;
  throw std::invalid_argument("unknown series '" + s + "'");
}

/// One CSV record. sweep_name is "<sweep variable>:<quantity>", e.g.
/// "b:sigma_11" or "fit:slope_aniso".
struct ResultRow {
  std::string sweep_name;
  double sweep_value = 0.0;
  Series series = Series::empirical;
  double value = 0.0;
  double stderr_ = 0.0;
};

inline constexpr const char* kCsvHeader = "experiment_id,sweep_name,sweep_value,series,value,stderr";

class ResultTable {
 public:
  explicit ResultTable(std::string id = {}) : id_(std::move(id)) {}

  const std::string& id() const { return id_; }
  const std::vector<ResultRow>& rows() const { return rows_; }

  void add(std::string sweep_name, double sweep_value, Series series, double value, double stderr_ = 0.0) {
    rows_.push_back({std::move(sweep_name), sweep_value, series, value, stderr_});
  }

  /// Adds empirical, analytic and ratio rows for one quantity. The ratio
  /// row is omitted when the analytic value is zero.
  void add_triplet(const std::string& sweep_name, double sweep_value, double empirical, double stderr_,
                   double analytic) {
    add(sweep_name, sweep_value, Series::empirical, empirical, stderr_);
    add(sweep_name, sweep_value, Series::analytic, analytic);
    if (analytic != 0.0) {
      add(sweep_name, sweep_value, Series::ratio, empirical / analytic, stderr_ / std::abs(analytic));
    }
  }

  const ResultRow* find(const std::string& sweep_name, double sweep_value, Series series) const {
    for (const auto& r : rows_) {
      if (r.series == series && r.sweep_name == sweep_name && same_sweep(r.sweep_value, sweep_value)) return &r;
    }
    return nullptr;
  }

  const ResultRow& get(const std::string& sweep_name, double sweep_value, Series series) const {
    if (const ResultRow* r = find(sweep_name, sweep_value, series)) return *r;
    throw std::out_of_range(id_ + ": no row " + sweep_name + "=" + format_real(sweep_value) + " [" +
                            to_string(series) + "]");
  }

  double value(const std::string& sweep_name, double sweep_value, Series series) const {
    return get(sweep_name, sweep_value, series).value;
  }

  /// Sweep values present for a quantity and series, in table order.
  std::vector<double> sweep_values(const std::string& sweep_name, Series series) const {
    std::vector<double> out;
    for (const auto& r : rows_)
      if (r.series == series && r.sweep_name == sweep_name) out.push_back(r.sweep_value);
    return out;
  }

 private:
  static bool same_sweep(double a, double b) { return a == b || std::abs(a - b) <= 1e-12 * std::abs(b); }

  std::string id_;
  std::vector<ResultRow> rows_;
};

inline void write_results_csv(std::ostream& os, const ResultTable& t) {
  os << kCsvHeader << '\n';
  for (const auto& r : t.rows()) {
    os << t.id() << ',' << r.sweep_name << ',' << format_real(r.sweep_value) << ',' << to_string(r.series) << ','
       << format_real(r.value) << ',' << format_real(r.stderr_) << '\n';
  }
}

inline ResultTable read_results_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || detail::trim(line) != kCsvHeader) {
    throw std::invalid_argument("line 1: expected header '" + std::string(kCsvHeader) + "'");
  }
  ResultTable table;
  std::size_t line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (detail::trim(line).empty()) continue;
    const auto f = detail::split(line, ',');
    const std::string where = "line " + std::to_string(line_no) + ": ";
    if (f.size() != 6) throw std::invalid_argument(where + "expected 6 fields");
    if (table.id().empty()) {
      table = ResultTable(f[0]);
    } else if (f[0] != table.id()) {
      throw std::invalid_argument(where + "mixed experiment ids");
    }
    try {
      table.add(f[1], detail::parse_real("sweep_value", f[2]), parse_series(f[3]), detail::parse_real("value", f[4]),
                detail::parse_real("stderr", f[5]));
    } catch (const std::invalid_argument& e) {
      throw std::invalid_argument(where + e.what());
    }
  }
  return table;
}

inline ResultTable read_results_csv_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  return read_results_csv(in);
}

}  // namespace fisherlab
