#include "lapnet/csv.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

#include "lapnet/errors.hpp"

namespace lapnet {

std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::size_t CsvTable::column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw IoError("CSV has no column '" + name + "'");
}

Vector CsvTable::numeric(const std::string& name) const {
  const std::size_t c = column(name);
  Vector out(static_cast<Index>(rows.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    const std::string& s = rows[r].at(c);
    if (s == "nan") {
      out(static_cast<Index>(r)) = std::numeric_limits<double>::quiet_NaN();
    } else {
      try {
        std::size_t used = 0;
        out(static_cast<Index>(r)) = std::stod(s, &used);
        if (used != s.size()) throw std::invalid_argument(s);
      } catch (const std::exception&) {
        throw IoError("non-numeric value '" + s + "' in column " + name);
      }
    }
  }
  return out;
}

void write_csv(const std::filesystem::path& path, const CsvTable& table) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  auto line = [&out](const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) {
      if (i) out << ',';
      out << cells[i];
    }
    out << '\n';
  };
  line(table.header);
  for (const auto& r : table.rows) {
    if (r.size() != table.header.size()) throw DimensionError("CSV row width differs from header");
    line(r);
  }
  if (!out) throw IoError("write failed for " + path.string());
}

void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const Matrix& values) {
  if (static_cast<Index>(header.size()) != values.cols()) {
    throw DimensionError("CSV header width differs from matrix");
  }
  CsvTable t{header, {}};
  for (Index i = 0; i < values.rows(); ++i) {
    std::vector<std::string> r;
    for (Index j = 0; j < values.cols(); ++j) r.push_back(format_double(values(i, j)));
    t.rows.push_back(std::move(r));
  }
  write_csv(path, t);
}

CsvTable read_csv(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  CsvTable t;
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    std::vector<std::string> cells;
    std::stringstream ss(line);
    std::string cell;
    while (std::getline(ss, cell, ',')) cells.push_back(cell);
    if (line.back() == ',') cells.emplace_back();
    if (first) {
      t.header = std::move(cells);
      first = false;
    } else {
      if (cells.size() != t.header.size()) throw IoError("ragged CSV: " + path.string());
      t.rows.push_back(std::move(cells));
    }
  }
  if (first) throw IoError("empty CSV: " + path.string());
  return t;
}

}  // namespace lapnet
