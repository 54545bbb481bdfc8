#pragma once

// Shared CSV formatting. Doubles print with 17 significant digits so that
// written values round-trip exactly and equal runs give equal bytes.

#include <cstdio>
#include <ostream>
#include <span>
#include <string>

namespace dsl::csv {

inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline void row(std::ostream &os, std::span<const double> values) {
  for (std::size_t i = 0; i < values.size(); ++i)
    os << (i ? "," : "") << num(values[i]);
  os << '\n';
}

} // namespace dsl::csv
