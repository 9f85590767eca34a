#include "ttv/csv.hpp"

#include <fstream>
#include <sstream>

#include "ttv/errors.hpp"

namespace ttv::csv {

std::vector<std::string> split_line(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

std::string join(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out.push_back(',');
    out += fields[i];
  }
  return out;
}

std::size_t Table::col(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i) {
    if (header[i] == name) return i;
  }
  throw FormatError("missing CSV column '" + name + "'");
}

Table read_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path);
  Table t;
  std::string line;
  if (!std::getline(in, line)) return t;  // empty file: no header, no rows
  t.header = split_line(line);
  std::size_t lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    auto fields = split_line(line);
    if (fields.size() != t.header.size()) {
      throw FormatError(path + ":" + std::to_string(lineno) + ": expected " +
                        std::to_string(t.header.size()) + " fields, got " +
                        std::to_string(fields.size()));
    }
    t.rows.push_back(std::move(fields));
  }
  return t;
}

void write_file(const std::string& path, const Table& table) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path);
  out << join(table.header) << '\n';
  for (const auto& row : table.rows) out << join(row) << '\n';
  if (!out) throw IoError("write failed for " + path);
}

}  // namespace ttv::csv
