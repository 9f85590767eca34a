#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace ttv::csv {

// Minimal CSV support for the pipeline's artifact files. No quoting: field
// values produced by this project never contain commas or newlines.

std::vector<std::string> split_line(const std::string& line);
std::string join(const std::vector<std::string>& fields);

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  // Index of a named column; throws FormatError when absent.
  std::size_t col(const std::string& name) const;
};

Table read_file(const std::string& path);
void write_file(const std::string& path, const Table& table);

}  // namespace ttv::csv
