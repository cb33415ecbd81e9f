#pragma once

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>

namespace consist {

// Flat key = value config files (TOML subset: no sections, no arrays).
// Comments start with '#'. Used for config snapshots and run manifests so
// diffs stay readable.
using KvMap = std::map<std::string, std::string>;

inline std::string kv_trim(const std::string& s) {
  std::size_t a = s.find_first_not_of(" \t\r\n");
  if (a == std::string::npos) return "";
  std::size_t b = s.find_last_not_of(" \t\r\n");
  return s.substr(a, b - a + 1);
}

inline KvMap parse_kv(std::istream& in) {
  KvMap out;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::string t = kv_trim(line);
    if (t.empty() || t[0] == '#') continue;
    std::size_t eq = t.find('=');
    if (eq == std::string::npos)
      throw std::runtime_error("config: missing '=' on line " + std::to_string(line_no));
    std::string key = kv_trim(t.substr(0, eq));
    std::string val = kv_trim(t.substr(eq + 1));
    if (val.size() >= 2 && val.front() == '"' && val.back() == '"') val = val.substr(1, val.size() - 2);
    out[key] = val;
  }
  return out;
}

inline KvMap load_kv(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("config: cannot open " + path.string());
  return parse_kv(f);
}

inline void save_kv(const KvMap& kv, const std::filesystem::path& path) {
  std::ofstream f(path);
  if (!f) throw std::runtime_error("config: cannot write " + path.string());
  for (const auto& [k, v] : kv) f << k << " = " << v << "\n";
}

inline std::string fmt_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}

}  // namespace consist
