#pragma once

// Small text helpers shared by the file formats: shortest round-trip real
// formatting and flat "key = value" config files.

#include <charconv>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <vector>

#include "tierseg/errors.hpp"

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace tierseg {

/// Shortest decimal form that parses back to the same double.
inline std::string format_real(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw storage_error("cannot format real");
  return std::string(buf, end);
}

inline double parse_real(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  double v = 0.0;
  if (!s.empty() && s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc{} || ptr != s.data() + s.size())
    throw storage_error("cannot parse real '" + std::string(s) + "'");
  return v;
}

inline std::string read_text(const std::filesystem::path& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw storage_error("cannot open " + path.string());
  std::ostringstream ss;
  ss << f.rdbuf();
  return ss.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw storage_error("cannot open " + path.string() + " for writing");
  f.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!f) throw storage_error("failed writing " + path.string());
}

/// Ordered key/value pairs; one "key = value" per line, '#' starts a comment.
class KeyValues {
 public:
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  void set(const std::string& key, double value) { values_[key] = format_real(value); }
  void set(const std::string& key, std::uint64_t value) { values_[key] = std::to_string(value); }
  void set(const std::string& key, bool value) { values_[key] = value ? "true" : "false"; }

  bool has(const std::string& key) const { return values_.contains(key); }

  const std::string& get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw config_error("missing config key '" + key + "'");
    return it->second;
  }

  double real(const std::string& key) const { return parse_real(get(key)); }

  std::uint64_t integer(const std::string& key) const {
    const std::string& s = get(key);
    std::uint64_t v = 0;
    auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc{} || ptr != s.data() + s.size())
      throw config_error("config key '" + key + "' is not an unsigned integer: " + s);
    return v;
  }

  bool boolean(const std::string& key) const {
    const std::string& s = get(key);
    if (s == "true" || s == "1") return true;
    if (s == "false" || s == "0") return false;
    throw config_error("config key '" + key + "' is not a boolean: " + s);
  }

  std::vector<std::uint64_t> integers(const std::string& key) const {
    std::vector<std::uint64_t> out;
    std::istringstream is(get(key));
    std::string tok;
    while (std::getline(is, tok, ','))
      if (!tok.empty()) out.push_back(std::stoull(tok));
    return out;
  }

  void set_list(const std::string& key, const std::vector<std::size_t>& values) {
    std::string s;
    for (std::size_t i = 0; i < values.size(); ++i) s += (i ? "," : "") + std::to_string(values[i]);
    values_[key] = s;
  }

  std::string str() const {
    std::string out;
    for (const auto& [k, v] : values_) out += k + " = " + v + "\n";
    return out;
  }

  static KeyValues parse(const std::string& text) {
    KeyValues kv;
    std::istringstream is(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(is, line)) {
      ++lineno;
      if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const auto eq = line.find('=');
      auto trim = [](std::string s) {
        const auto b = s.find_first_not_of(" \t\r");
        const auto e = s.find_last_not_of(" \t\r");
        return b == std::string::npos ? std::string{} : s.substr(b, e - b + 1);
      };
      if (eq == std::string::npos) {
        if (!trim(line).empty()) throw config_error("config line " + std::to_string(lineno) + " has no '='");
        continue;
      }
      kv.values_[trim(line.substr(0, eq))] = trim(line.substr(eq + 1));
    }
    return kv;
  }

  static KeyValues load(const std::filesystem::path& path) { return parse(read_text(path)); }
  void save(const std::filesystem::path& path) const { write_text(path, str()); }

 private:
  std::map<std::string, std::string> values_;
};

/// Keeps freed activation buffers in the process heap between training
/// steps instead of returning them to the OS (glibc only).
inline void retain_heap_memory() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 256 << 20);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace tierseg
