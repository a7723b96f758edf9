#include "vtu/keyvalue.hpp"

#include "vtu/io.hpp"

#include <algorithm>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <sstream>

namespace vtu {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

}  // namespace

KeyValues KeyValues::parse(const std::string& text, const std::string& source) {
  KeyValues kv;
  kv.source_ = source;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const std::string t = trim(line);
    if (t.empty() || t[0] == '#') continue;
    const auto eq = t.find('=');
    if (eq == std::string::npos)
      throw ConfigError(source + ":" + std::to_string(lineno) + ": expected key=value, got '" + t + "'");
    const std::string key = trim(t.substr(0, eq));
    if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": empty key");
    if (kv.has(key)) throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
    kv.set(key, trim(t.substr(eq + 1)));
  }
  return kv;
}

KeyValues KeyValues::load(const std::filesystem::path& path) {
  const auto bytes = read_file(path);
  return parse(std::string(bytes.begin(), bytes.end()), path.string());
}

void KeyValues::set(const std::string& key, const std::string& value) {
  if (!has(key)) order_.push_back(key);
  values_[key] = value;
}

const std::string& KeyValues::get(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError(source_ + ": missing key '" + key + "'");
  return it->second;
}

std::string KeyValues::get_or(const std::string& key, const std::string& fallback) const {
  return has(key) ? get(key) : fallback;
}

double KeyValues::get_double(const std::string& key) const {
  try {
    return parse_double(get(key));
  } catch (const ConfigError& e) {
    throw ConfigError(source_ + ": key '" + key + "': " + e.what());
  }
}

std::int64_t KeyValues::get_int(const std::string& key) const {
  const std::string& s = get(key);
  std::int64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError(source_ + ": key '" + key + "': not an integer: '" + s + "'");
  return v;
}

std::uint64_t KeyValues::get_uint(const std::string& key) const {
  const std::string& s = get(key);
  std::uint64_t v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size())
    throw ConfigError(source_ + ": key '" + key + "': not an unsigned integer: '" + s + "'");
  return v;
}

bool KeyValues::get_bool(const std::string& key) const {
  const std::string& s = get(key);
  if (s == "true" || s == "1") return true;
  if (s == "false" || s == "0") return false;
  throw ConfigError(source_ + ": key '" + key + "': expected true/false, got '" + s + "'");
}

std::vector<std::string> KeyValues::get_list(const std::string& key) const { return split(get(key)); }

void KeyValues::require_known(const std::vector<std::string>& allowed) const {
  for (const auto& k : order_)
    if (std::find(allowed.begin(), allowed.end(), k) == allowed.end())
      throw ConfigError(source_ + ": unknown key '" + k + "'");
}

std::string KeyValues::to_text() const {
  std::string out;
  for (const auto& k : order_) out += k + "=" + values_.at(k) + "\n";
  return out;
}

std::string format_double(double v) {
  char buf[64];
  auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
  (void)ec;
  return std::string(buf, p);
}

std::string format_hex(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%a", v);
  return buf;
}

double parse_double(const std::string& text) {
  if (text.empty()) throw ConfigError("empty number");
  char* end = nullptr;
  const double v = std::strtod(text.c_str(), &end);
  if (end != text.c_str() + text.size()) throw ConfigError("not a number: '" + text + "'");
  return v;
}

std::string join(const std::vector<std::string>& parts, char sep) {
  std::string out;
  for (std::size_t i = 0; i < parts.size(); ++i) {
    if (i) out += sep;
    out += parts[i];
  }
  return out;
}

std::vector<std::string> split(const std::string& text, char sep) {
  std::vector<std::string> out;
  if (text.empty()) return out;
  std::size_t start = 0;
  while (true) {
    const auto pos = text.find(sep, start);
    out.push_back(trim(text.substr(start, pos == std::string::npos ? std::string::npos : pos - start)));
    if (pos == std::string::npos) break;
    start = pos + 1;
  }
  return out;
}

}  // namespace vtu
