#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "lapnet/types.hpp"

namespace lapnet {

/// 17 significant digits ("%.17g"), which parses back to the same double.
std::string format_double(double v);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Column index by name; throws IoError when absent.
  std::size_t column(const std::string& name) const;
  /// Parses the named column as doubles ("nan" allowed).
  Vector numeric(const std::string& name) const;
};

void write_csv(const std::filesystem::path& path, const CsvTable& table);
/// Numeric matrix with a header row.
void write_csv(const std::filesystem::path& path, const std::vector<std::string>& header,
               const Matrix& values);

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace lapnet
