#pragma once

#include <algorithm>
#include <string>
#include <string_view>
#include <vector>

namespace forge {

/// Numeric-aware ordering for subject and dimension ids ("d2" < "d10",
/// "9" < "16"). This is the canonical order for every id set the library
/// emits.
bool natural_less(std::string_view a, std::string_view b);

inline void natural_sort(std::vector<std::string>& ids) {
  std::sort(ids.begin(), ids.end(),
            [](const std::string& a, const std::string& b) { return natural_less(a, b); });
}

std::vector<std::string> split(std::string_view text, char sep);
std::string join(const std::vector<std::string>& parts, std::string_view sep);

/// Shortest round-trip decimal form of a double.
std::string format_number(double value);
/// Fixed-point with the given number of decimals.
std::string format_fixed(double value, int decimals);

}  // namespace forge
