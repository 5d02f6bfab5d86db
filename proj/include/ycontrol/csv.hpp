#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace ycontrol {

// %.{digits}g formatting; locale independent and byte-stable across runs.
std::string format_sig(double value, int digits);

// Full round-trip precision.
inline std::string format_exact(double value) { return format_sig(value, 17); }

std::vector<std::string> split_csv_line(std::string_view line);

}  // namespace ycontrol
