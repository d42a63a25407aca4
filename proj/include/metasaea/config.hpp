#pragma once

// Flat key-value run configuration. Grammar: one `key = value` pair per line,
// full-line comments starting with '#', blank lines ignored. No sections, no
// quoting, no inline comments. Typed getters record which keys were consumed
// so a command can reject misspelled keys once it has read its schema.

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "metasaea/common.hpp"

namespace metasaea {

class ConfigError : public std::runtime_error {
 public:
  explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline std::string trim(const std::string& s) {
  std::size_t b = 0, e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return s.substr(b, e - b);
}

}  // namespace detail

class Config {
 public:
  static Config parse(const std::string& text) {
    Config cfg;
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
      ++lineno;
      std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#') continue;
      auto eq = t.find('=');
      if (eq == std::string::npos)
        throw ConfigError("config line " + std::to_string(lineno) + " has no '=': " + t);
      std::string key = detail::trim(t.substr(0, eq));
      std::string value = detail::trim(t.substr(eq + 1));
      if (key.empty())
        throw ConfigError("config line " + std::to_string(lineno) + " has an empty key");
      if (cfg.kv_.count(key))
        throw ConfigError("duplicate config key '" + key + "' at line " +
                          std::to_string(lineno));
      cfg.kv_[key] = value;
    }
    return cfg;
  }

  static Config load(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot read config file: " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str());
  }

  /// CLI override; counts as already consumed if never read back.
  void set(const std::string& key, const std::string& value) { kv_[key] = value; }

  bool has(const std::string& key) const { return kv_.count(key) > 0; }

  std::string str(const std::string& key, const std::string& def) const {
    read_.insert(key);
    auto it = kv_.find(key);
    return it == kv_.end() ? def : it->second;
  }

  std::string require(const std::string& key) const {
    read_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end() || it->second.empty())
      throw ConfigError("missing required config key '" + key + "'");
    return it->second;
  }

  int geti(const std::string& key, int def) const {
    return convert<int>(key, def, "integer",
                        [](const std::string& s) { return std::stoi(s); });
  }

  std::uint64_t getu64(const std::string& key, std::uint64_t def) const {
    return convert<std::uint64_t>(key, def, "unsigned integer", [](const std::string& s) {
      return static_cast<std::uint64_t>(std::stoull(s));
    });
  }

  double getd(const std::string& key, double def) const {
    return convert<double>(key, def, "number",
                           [](const std::string& s) { return std::stod(s); });
  }

  bool getb(const std::string& key, bool def) const {
    std::string v = str(key, def ? "true" : "false");
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("config key '" + key + "' expects a boolean, got '" + v + "'");
  }

  /// Comma-separated list, entries trimmed, empties dropped.
  std::vector<std::string> list(const std::string& key) const {
    std::vector<std::string> out;
    std::istringstream in(str(key, ""));
    std::string item;
    while (std::getline(in, item, ',')) {
      std::string t = detail::trim(item);
      if (!t.empty()) out.push_back(std::move(t));
    }
    return out;
  }

  /// Call after a command has consumed its schema: any key never read is a
  /// typo and gets named in the error.
  void reject_unknown() const {
    std::string bad;
    for (const auto& [key, value] : kv_)
      if (!read_.count(key)) bad += (bad.empty() ? "" : ", ") + key;
    if (!bad.empty()) throw ConfigError("unknown config key(s): " + bad);
  }

 private:
  template <class T, class Fn>
  T convert(const std::string& key, T def, const char* kind, Fn fn) const {
    read_.insert(key);
    auto it = kv_.find(key);
    if (it == kv_.end()) return def;
    try {
      std::size_t pos = 0;
      (void)pos;
      return fn(it->second);
    } catch (const std::exception&) {
      throw ConfigError("config key '" + key + "' expects " + std::string(kind) +
                        ", got '" + it->second + "'");
    }
  }

  std::map<std::string, std::string> kv_;
  mutable std::set<std::string> read_;
};

}  // namespace metasaea
