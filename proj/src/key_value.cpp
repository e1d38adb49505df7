#include "prolific/key_value.hpp"

#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "prolific/errors.hpp"

namespace prolific {

namespace {

std::string strip(const std::string& s) {
  std::size_t b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  std::size_t e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
  std::vector<std::string> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item = strip(item);
    if (!item.empty()) out.push_back(item);
  }
  return out;
}

double to_double(const std::string& key, const std::string& text) {
  char* end = nullptr;
  errno = 0;
  double v = std::strtod(text.c_str(), &end);
  if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE || !std::isfinite(v))
    throw ConfigError("config key '" + key + "': '" + text + "' is not a number");
  return v;
}

long long to_int(const std::string& key, const std::string& text) {
  char* end = nullptr;
  errno = 0;
  long long v = std::strtoll(text.c_str(), &end, 10);
  if (text.empty() || end != text.c_str() + text.size() || errno == ERANGE)
    throw ConfigError("config key '" + key + "': '" + text + "' is not an integer");
  return v;
}

}  // namespace

KeyValueConfig KeyValueConfig::parse(const std::string& text, const std::string& origin) {
  KeyValueConfig cfg;
  cfg.origin_ = origin;
  std::stringstream ss(text);
  std::string line;
  int lineno = 0;
  while (std::getline(ss, line)) {
    ++lineno;
    std::size_t hash = line.find('#');
    if (hash != std::string::npos) line = line.substr(0, hash);
    line = strip(line);
    if (line.empty()) continue;
    std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected key = value");
    std::string key = strip(line.substr(0, eq));
    if (key.empty()) throw ConfigError(origin + ":" + std::to_string(lineno) + ": empty key");
    if (cfg.values_.count(key))
      throw ConfigError(origin + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    cfg.values_[key] = strip(line.substr(eq + 1));
  }
  return cfg;
}

KeyValueConfig KeyValueConfig::load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot open config file " + path);
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str(), path);
}

std::string KeyValueConfig::get_string(const std::string& key, const std::string& fallback) const {
  auto it = values_.find(key);
  if (it == values_.end()) return fallback;
  used_.insert(key);
  return it->second;
}

double KeyValueConfig::get_double(const std::string& key, double fallback) const {
  return has(key) ? to_double(key, get_string(key, "")) : fallback;
}

long long KeyValueConfig::get_int(const std::string& key, long long fallback) const {
  return has(key) ? to_int(key, get_string(key, "")) : fallback;
}

std::vector<double> KeyValueConfig::get_doubles(const std::string& key, const std::vector<double>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<double> out;
  for (const auto& s : split_list(get_string(key, ""))) out.push_back(to_double(key, s));
  return out;
}

std::vector<long long> KeyValueConfig::get_ints(const std::string& key, const std::vector<long long>& fallback) const {
  if (!has(key)) return fallback;
  std::vector<long long> out;
  for (const auto& s : split_list(get_string(key, ""))) out.push_back(to_int(key, s));
  return out;
}

std::vector<std::string> KeyValueConfig::get_strings(const std::string& key,
                                                     const std::vector<std::string>& fallback) const {
  if (!has(key)) return fallback;
  return split_list(get_string(key, ""));
}

void KeyValueConfig::reject_unknown() const {
  std::string unknown;
  for (const auto& [k, v] : values_)
    if (!used_.count(k)) unknown += (unknown.empty() ? "" : ", ") + k;
  if (!unknown.empty()) throw ConfigError(origin_ + ": unknown config keys: " + unknown);
}

}  // namespace prolific
