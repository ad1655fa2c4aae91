// Copyright 2026 The RSE Authors
// License: Apache 2.0 (http://www.apache.org/licenses/LICENSE-2.0)
//
// INI-style configuration: [section] headers, key = value lines, '#' or ';'
// comments. Consumers declare a schema and unknown keys are rejected, so a
// typo fails loudly instead of silently running a default.

#ifndef RSE_CONFIG_HPP_
#define RSE_CONFIG_HPP_

#include <cctype>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "rse/util.hpp"

namespace rse {

namespace detail {

inline std::string trim(const std::string& s) {
  size_t a = 0, b = s.size();
  while (a < b && std::isspace(static_cast<unsigned char>(s[a]))) ++a;
  while (b > a && std::isspace(static_cast<unsigned char>(s[b - 1]))) --b;
  return s.substr(a, b - a);
}

}  // namespace detail

struct ConfigFile {
  std::string origin = "<string>";
  std::map<std::string, std::map<std::string, std::string>> sections;

  static ConfigFile parse_text(const std::string& text,
                               const std::string& origin = "<string>") {
    ConfigFile cf;
    cf.origin = origin;
    std::istringstream in(text);
    std::string line, section;
    size_t ln = 0;
    const auto fail = [&](const std::string& msg) {
      throw ConfigError("config " + origin + ":" + std::to_string(ln) + ": " + msg);
    };
    while (std::getline(in, line)) {
      ++ln;
      const std::string t = detail::trim(line);
      if (t.empty() || t[0] == '#' || t[0] == ';') continue;
      if (t.front() == '[') {
        if (t.back() != ']') fail("unterminated section header");
        section = detail::trim(t.substr(1, t.size() - 2));
        if (section.empty()) fail("empty section name");
        continue;
      }
      const size_t eq = t.find('=');
      if (eq == std::string::npos) fail("expected 'key = value'");
      const std::string key = detail::trim(t.substr(0, eq));
      const std::string val = detail::trim(t.substr(eq + 1));
      if (key.empty()) fail("empty key");
      if (section.empty()) fail("key '" + key + "' appears before any [section]");
      auto& sec = cf.sections[section];
      if (sec.count(key)) fail("duplicate key '" + key + "' in [" + section + "]");
      sec[key] = val;
    }
    return cf;
  }

  static ConfigFile load(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw DataError("cannot open config file: " + path);
    std::ostringstream ss;
    ss << f.rdbuf();
    return parse_text(ss.str(), path);
  }

  const std::string* find(const std::string& sec, const std::string& key) const {
    const auto s = sections.find(sec);
    if (s == sections.end()) return nullptr;
    const auto k = s->second.find(key);
    return k == s->second.end() ? nullptr : &k->second;
  }

  bool has(const std::string& sec, const std::string& key) const {
    return find(sec, key) != nullptr;
  }

  std::string get_str(const std::string& sec, const std::string& key,
                      const std::string& fallback) const {
    const std::string* v = find(sec, key);
    return v ? *v : fallback;
  }

  double get_double(const std::string& sec, const std::string& key,
                    double fallback) const {
    const std::string* v = find(sec, key);
    if (!v) return fallback;
    try {
      size_t used = 0;
      const double d = std::stod(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing");
      return d;
    } catch (const std::exception&) {
      throw ConfigError("config " + origin + ": [" + sec + "] " + key +
                        " = '" + *v + "' is not a number");
    }
  }

  int64_t get_int(const std::string& sec, const std::string& key,
                  int64_t fallback) const {
    const std::string* v = find(sec, key);
    if (!v) return fallback;
    try {
      size_t used = 0;
      const int64_t i = std::stoll(*v, &used);
      if (used != v->size()) throw std::invalid_argument("trailing");
      return i;
    } catch (const std::exception&) {
      throw ConfigError("config " + origin + ": [" + sec + "] " + key +
                        " = '" + *v + "' is not an integer");
    }
  }

  bool get_bool(const std::string& sec, const std::string& key,
                bool fallback) const {
    const std::string* v = find(sec, key);
    if (!v) return fallback;
    if (*v == "true" || *v == "1" || *v == "yes") return true;
    if (*v == "false" || *v == "0" || *v == "no") return false;
    throw ConfigError("config " + origin + ": [" + sec + "] " + key +
                      " = '" + *v + "' is not a boolean");
  }

  // Every present section and key must appear in the schema.
  void check_schema(const std::map<std::string, std::set<std::string>>& schema) const {
    for (const auto& [sec, keys] : sections) {
      const auto it = schema.find(sec);
      if (it == schema.end())
        throw ConfigError("config " + origin + ": unknown section [" + sec + "]");
      for (const auto& [key, val] : keys) {
        (void)val;
        if (!it->second.count(key))
          throw ConfigError("config " + origin + ": unknown key '" + key +
                            "' in section [" + sec + "]");
      }
    }
  }
};

}  // namespace rse

#endif  // RSE_CONFIG_HPP_
