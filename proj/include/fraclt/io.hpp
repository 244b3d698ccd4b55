#pragma once

// Byte-stable text output: CSV with a schema line, fixed number formatting.

#include <cstdio>
#include <fstream>
#include <initializer_list>
#include <sstream>
#include <stdexcept>
#include <type_traits>
#include <string>
#include <vector>

namespace fraclt {

inline constexpr const char* kCsvSchemaLine = "# fraclt-schema=1";

/// Shortest round-trip representation is not portable; %.17g is.
inline std::string format_double(double x) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", x);
  return buf;
}

class CsvTable {
 public:
  explicit CsvTable(std::vector<std::string> columns) : columns_(std::move(columns)) {}

  template <class... Cells>
  void row(const Cells&... cells) {
    std::vector<std::string> r;
    (r.push_back(cell(cells)), ...);
    add(std::move(r));
  }

  void add(std::vector<std::string> cells) {
    if (cells.size() != columns_.size()) throw std::invalid_argument("CSV row width mismatch");
    rows_.push_back(std::move(cells));
  }

  std::string str() const {
    std::ostringstream os;
    os << kCsvSchemaLine << '\n';
    join(os, columns_);
    for (const auto& r : rows_) join(os, r);
    return os.str();
  }

  void write(const std::string& path) const {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f << str();
  }

  std::size_t size() const { return rows_.size(); }

 private:
  static std::string cell(double x) { return format_double(x); }
  static std::string cell(float x) { return format_double(x); }
  static std::string cell(const std::string& s) { return s; }
  static std::string cell(const char* s) { return s; }
  static std::string cell(bool b) { return b ? "true" : "false"; }
  template <class I>
    requires std::is_integral_v<I>
  static std::string cell(I i) {
    return std::to_string(i);
  }

  static void join(std::ostringstream& os, const std::vector<std::string>& cells) {
    for (std::size_t i = 0; i < cells.size(); ++i) os << (i ? "," : "") << cells[i];
    os << '\n';
  }

  std::vector<std::string> columns_;
  std::vector<std::vector<std::string>> rows_;
};

}  // namespace fraclt
