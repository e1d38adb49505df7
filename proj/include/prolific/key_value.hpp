#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

namespace prolific {

/// Flat `key = value` configuration. Lines starting with '#' are comments;
/// list values are comma separated. Lookups record which keys were read so
/// leftovers can be reported as unknown.
class KeyValueConfig {
 public:
  KeyValueConfig() = default;
  static KeyValueConfig parse(const std::string& text, const std::string& origin = "<config>");
  static KeyValueConfig load(const std::string& path);

  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  long long get_int(const std::string& key, long long fallback) const;
  std::vector<double> get_doubles(const std::string& key, const std::vector<double>& fallback) const;
  std::vector<long long> get_ints(const std::string& key, const std::vector<long long>& fallback) const;
  std::vector<std::string> get_strings(const std::string& key, const std::vector<std::string>& fallback) const;

  /// Keys present in the file but never read. Throws ConfigError if any.
  void reject_unknown() const;
  const std::map<std::string, std::string>& values() const { return values_; }

 private:
  std::map<std::string, std::string> values_;
  mutable std::set<std::string> used_;
  std::string origin_ = "<config>";
};

}  // namespace prolific
