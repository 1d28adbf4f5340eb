#pragma once

#include <charconv>
#include <cstdio>
#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "tripgen/common.hpp"

namespace tripgen::csv {

/// Splits one CSV line. Handles double-quoted fields with "" escapes;
/// embedded newlines are not supported.
inline std::vector<std::string> split_line(std::string_view line) {
  std::vector<std::string> out;
  std::string field;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"') {
        if (i + 1 < line.size() && line[i + 1] == '"') {
          field.push_back('"');
          ++i;
        } else {
          quoted = false;
        }
      } else {
        field.push_back(c);
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(field));
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(std::move(field));
  return out;
}

inline std::string quote(std::string_view field) {
  if (field.find_first_of(",\"\n") == std::string_view::npos) return std::string(field);
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += "\"\"";
    else out.push_back(c);
  }
  out += '"';
  return out;
}

/// Shortest text that parses back to exactly the same double.
inline std::string format_double(double v) {
  char buf[32];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, ptr);
}

inline double parse_double(std::string_view s) {
  while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
  while (!s.empty() && s.back() == ' ') s.remove_suffix(1);
  double v = 0;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw DataError("not a number: '" + std::string(s) + "'");
  return v;
}

/// Header-indexed reader over a stream.
class Reader {
 public:
  explicit Reader(std::istream& in) : in_(in) {
    std::string line;
    if (!std::getline(in_, line)) throw ConfigError("CSV input is empty (missing header row)");
    if (line.size() >= 3 && static_cast<unsigned char>(line[0]) == 0xEF) line.erase(0, 3);  // UTF-8 BOM
    header_ = split_line(line);
    for (std::size_t i = 0; i < header_.size(); ++i) index_[header_[i]] = i;
  }

  [[nodiscard]] const std::vector<std::string>& header() const { return header_; }

  [[nodiscard]] bool has(const std::string& column) const { return index_.contains(column); }

  [[nodiscard]] std::size_t column(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw ConfigError("CSV missing required column '" + name + "'");
    return it->second;
  }

  /// Reads the next non-empty row; false at end of input.
  bool next(std::vector<std::string>& row) {
    std::string line;
    while (std::getline(in_, line)) {
      ++line_number_;
      if (line.empty() || line == "\r") continue;
      row = split_line(line);
      return true;
    }
    return false;
  }

  /// 1-based data line number of the last row returned (header excluded).
  [[nodiscard]] std::size_t line_number() const { return line_number_; }

 private:
  std::istream& in_;
  std::vector<std::string> header_;
  std::unordered_map<std::string, std::size_t> index_;
  std::size_t line_number_ = 0;
};

inline void write_row(std::ostream& out, const std::vector<std::string>& fields) {
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out << ',';
    out << quote(fields[i]);
  }
  out << '\n';
}

}  // namespace tripgen::csv
