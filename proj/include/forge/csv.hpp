#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace forge::csv {

using Row = std::vector<std::string>;

/// RFC 4180 reader: quoted fields, doubled quotes, CRLF or LF line ends, a
/// leading UTF-8 BOM is skipped. Blank lines are dropped.
std::vector<Row> parse(std::string_view text);

/// Quotes a field when it contains a separator, quote or line break.
std::string escape(std::string_view field);

std::string format_row(const Row& row);

}  // namespace forge::csv
