#ifndef DVOPT_STRFMT_HPP
#define DVOPT_STRFMT_HPP

#include <cstdio>
#include <sstream>
#include <string>
#include <vector>

namespace dvopt {
namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = s.find_first_not_of(" \t\r");
  if (a == std::string::npos) return "";
  size_t b = s.find_last_not_of(" \t\r");
  return s.substr(a, b - a + 1);
}

inline std::string format_g17(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

// Reads every whitespace-separated token of `s` as a double. Returns false on
// the first token that is not a number; `out` then holds the values parsed so
// far.
inline bool split_numbers(const std::string& s, std::vector<double>& out) {
  out.clear();
  std::istringstream iss(s);
  std::string tok;
  while (iss >> tok) {
    size_t used = 0;
    double v = 0.0;
    try {
      v = std::stod(tok, &used);
    } catch (const std::exception&) {
      return false;
    }
    if (used != tok.size()) return false;
    out.push_back(v);
  }
  return true;
}

}  // namespace detail
}  // namespace dvopt

#endif  // DVOPT_STRFMT_HPP
