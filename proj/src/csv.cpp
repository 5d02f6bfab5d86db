#include "ycontrol/csv.hpp"

#include <cstdio>

namespace ycontrol {

std::string format_sig(double value, int digits) {
  char buffer[64];
  if (value == 0.0) value = 0.0;  // drop the sign of negative zero
  std::snprintf(buffer, sizeof(buffer), "%.*g", digits, value);
  return buffer;
}

std::vector<std::string> split_csv_line(std::string_view line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    std::string_view field = line.substr(start, comma - start);
    while (!field.empty() && (field.back() == '\r' || field.back() == ' '))
      field.remove_suffix(1);
    while (!field.empty() && field.front() == ' ') field.remove_prefix(1);
    fields.emplace_back(field);
    if (comma == std::string_view::npos) break;
    start = comma + 1;
  }
  return fields;
}

}  // namespace ycontrol
