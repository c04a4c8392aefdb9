#pragma once

// Flat "key = value" text configuration. '#' starts a comment, blank lines
// are ignored, list values are comma separated. Later assignments win, which
// is how command-line overrides are layered on top of a file.

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

namespace hhic {

class KeyValueConfig {
 public:
  static KeyValueConfig parse(std::istream& in, const std::string& source = "<stream>");
  static KeyValueConfig parse_string(const std::string& text, const std::string& source = "<string>");
  static KeyValueConfig load(const std::string& path);

  // Accepts "key=value".
  void set_assignment(const std::string& assignment);
  void set(const std::string& key, const std::string& value) { values_[key] = value; }

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& values() const noexcept { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<int> get_ints(const std::string& key, const std::vector<int>& fallback) const;
  std::vector<std::string> get_strings(const std::string& key) const;

  // Throws ConfigError naming every key not in allowed.
  void check_known(const std::set<std::string>& allowed) const;

 private:
  std::map<std::string, std::string> values_;
  std::string source_;
};

std::vector<std::string> split_list(const std::string& s);
double parse_double(const std::string& s, const std::string& what);
std::int64_t parse_int(const std::string& s, const std::string& what);

}  // namespace hhic
