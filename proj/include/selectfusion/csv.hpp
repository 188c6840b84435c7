#pragma once

// Minimal CSV helpers shared by the writers. Doubles use the shortest
// round-trip representation so files are byte-stable and lossless.

#include <charconv>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

namespace selectfusion {

std::string format_double(double v);
double parse_double(std::string_view s);

std::vector<std::string> split_csv_line(std::string_view line);

struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Index of `name` in the header; throws BadFormat if absent.
  std::size_t column(std::string_view name) const;
};

CsvTable read_csv(const std::filesystem::path& path);

}  // namespace selectfusion
