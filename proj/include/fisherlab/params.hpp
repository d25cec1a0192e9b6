#pragma once

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdlib>
#include <map>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

namespace fisherlab {

/// Raised for bad user input: unknown keys, malformed values, out-of-range
/// settings. Reported as a usage error.
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

enum class ParamKind { integer, real, int_list, real_list, text };

struct ParamSpec {
  std::string name;
  ParamKind kind;
  std::string desk;   // default at desk scale
  std::string paper;  // default at paper scale
  std::string help;
};

namespace detail {

inline std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r\n");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r\n");
  return std::string(s.substr(b, e - b + 1));
}

inline std::vector<std::string> split(std::string_view s, char sep) {
  std::vector<std::string> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = s.find(sep, start);
    out.push_back(trim(s.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline std::int64_t parse_integer(const std::string& key, const std::string& text) {
  errno = 0;
  char* end = nullptr;
  const long long v = std::strtoll(text.c_str(), &end, 10);
  if (text.empty() || *end != '\0' || errno == ERANGE) {
    throw ConfigError(key + ": expected an integer, got '" + text + "'");
  }
  return v;
}

inline double parse_real(const std::string& key, const std::string& text) {
  errno = 0;
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (text.empty() || *end != '\0' || errno == ERANGE || !std::isfinite(v)) {
    throw ConfigError(key + ": expected a finite number, got '" + text + "'");
  }
  return v;
}

}  // namespace detail

/// Effective parameters of one experiment, stored as text and parsed on
/// access. Every value is validated against its spec by validate().
class Params {
 public:
  Params() = default;
  Params(std::vector<ParamSpec> specs, std::map<std::string, std::string> values)
      : specs_(std::move(specs)), values_(std::move(values)) {}

  const std::map<std::string, std::string>& values() const { return values_; }
  const std::vector<ParamSpec>& specs() const { return specs_; }

  const std::string& raw(const std::string& key) const {
    const auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown parameter '" + key + "'");
    return it->second;
  }

  std::int64_t integer(const std::string& key) const { return detail::parse_integer(key, raw(key)); }
  double real(const std::string& key) const { return detail::parse_real(key, raw(key)); }
  const std::string& text(const std::string& key) const { return raw(key); }

  std::vector<std::int64_t> ints(const std::string& key) const {
    std::vector<std::int64_t> out;
    for (const auto& item : detail::split(raw(key), ',')) out.push_back(detail::parse_integer(key, item));
    return out;
  }

  std::vector<double> reals(const std::string& key) const {
    std::vector<double> out;
    for (const auto& item : detail::split(raw(key), ',')) out.push_back(detail::parse_real(key, item));
    return out;
  }

  /// Parses every value once so malformed input fails before any work.
  void validate() const {
    for (const auto& s : specs_) {
      switch (s.kind) {
        case ParamKind::integer: integer(s.name); break;
        case ParamKind::real: real(s.name); break;
        case ParamKind::int_list: ints(s.name); break;
        case ParamKind::real_list: reals(s.name); break;
        case ParamKind::text: break;
      }
    }
  }

 private:
  std::vector<ParamSpec> specs_;
  std::map<std::string, std::string> values_;
};

}  // namespace fisherlab
