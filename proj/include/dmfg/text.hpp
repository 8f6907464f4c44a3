#ifndef DMFG_TEXT_HPP
#define DMFG_TEXT_HPP

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace dmfg::text {

/// Shortest decimal that round-trips to the same double.
std::string format_double(double value);

std::vector<std::string_view> split_whitespace(std::string_view line);
std::vector<std::string_view> split(std::string_view line, char sep);
std::string_view trim(std::string_view s);

std::optional<double> parse_double(std::string_view token);
std::optional<long long> parse_int(std::string_view token);

}  // namespace dmfg::text

#endif  // DMFG_TEXT_HPP
