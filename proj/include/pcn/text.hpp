#pragma once

// Locale-independent number formatting and parsing for every text format the
// toolkit writes (configs, CSV logs, reports). Doubles use the shortest
// representation that round-trips.

#include <charconv>
#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace pcn {

inline std::string format_double(double v) {
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  if (std::isnan(v)) return "nan";
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw std::runtime_error("failed to format number");
  return std::string(buf, end);
}

inline double parse_double(std::string_view s, std::string_view what) {
  if (s == "inf") return HUGE_VAL;
  if (s == "-inf") return -HUGE_VAL;
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size() || s.empty()) {
    throw std::invalid_argument(std::string(what) + ": '" + std::string(s) + "' is not a number");
  }
  return v;
}

template <typename Int>
Int parse_int(std::string_view s, std::string_view what) {
  Int v{};
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || end != s.data() + s.size() || s.empty()) {
    throw std::invalid_argument(std::string(what) + ": '" + std::string(s) + "' is not an integer");
  }
  return v;
}

inline std::string_view trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace pcn
