#pragma once

#include <charconv>
#include <cstdio>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "wearmil/error.hpp"

namespace wearmil {

// Minimal CSV support for the pipeline's file formats: comma-separated,
// UTF-8, no quoting (fields must not contain commas or newlines), empty
// field means "missing". Number formatting goes through to_chars /
// from_chars so output is locale-independent and round-trips exactly.

inline std::string format_double(double x) {
  char buf[64];
  auto res = std::to_chars(buf, buf + sizeof(buf), x);
  return std::string(buf, res.ptr);
}

inline double parse_double(std::string_view s, const std::string& context) {
  double x = 0;
  const char* first = s.data();
  const char* last = s.data() + s.size();
  auto res = std::from_chars(first, last, x);
  if (res.ec != std::errc{} || res.ptr != last)
    throw Error("non-numeric value '" + std::string(s) + "' " + context);
  return x;
}

inline long long parse_int(std::string_view s, const std::string& context) {
  long long x = 0;
  auto res = std::from_chars(s.data(), s.data() + s.size(), x);
  if (res.ec != std::errc{} || res.ptr != s.data() + s.size())
    throw Error("non-integer value '" + std::string(s) + "' " + context);
  return x;
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = line.find(',', start);
    if (pos == std::string::npos) {
      out.push_back(line.substr(start));
      break;
    }
    out.push_back(line.substr(start, pos - start));
    start = pos + 1;
  }
  if (!out.empty() && !out.back().empty() && out.back().back() == '\r')
    out.back().pop_back();
  return out;
}

// Whole-file CSV with a mandatory header row. Rows keeps file order;
// row_number(i) maps back to 1-based line numbers for error messages.
struct CsvFile {
  std::string path;
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  long long row_number(std::size_t idx) const {
    return static_cast<long long>(idx) + 2;  // +1 header, +1 one-based
  }
};

inline CsvFile read_csv(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path);
  CsvFile f;
  f.path = path;
  std::string line;
  if (!std::getline(in, line)) throw Error("empty file: " + path);
  f.header = split_csv_line(line);
  while (std::getline(in, line)) {
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    f.rows.push_back(split_csv_line(line));
  }
  return f;
}

inline void write_lines(const std::string& path,
                        const std::vector<std::string>& lines) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write file: " + path);
  for (const auto& l : lines) out << l << '\n';
  if (!out) throw Error("write failed: " + path);
}

inline std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("cannot open file: " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace wearmil
