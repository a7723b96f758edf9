#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

namespace vtu {

class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Ordered `key=value` lines. Blank lines and lines starting with '#' are
/// ignored; whitespace around keys and values is trimmed.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text, const std::string& source = "<text>");
  static KeyValues load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::string& get(const std::string& key) const;
  std::string get_or(const std::string& key, const std::string& fallback) const;

  double get_double(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  std::uint64_t get_uint(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::vector<std::string> get_list(const std::string& key) const;

  /// Throws ConfigError naming the first key outside `allowed`.
  void require_known(const std::vector<std::string>& allowed) const;

  const std::vector<std::string>& keys() const { return order_; }
  std::string to_text() const;

 private:
  std::map<std::string, std::string> values_;
  std::vector<std::string> order_;
  std::string source_;
};

/// Shortest decimal text that parses back to the same double.
std::string format_double(double v);
/// C99 hexadecimal float text (exact).
std::string format_hex(double v);
double parse_double(const std::string& text);

std::string join(const std::vector<std::string>& parts, char sep = ',');
std::vector<std::string> split(const std::string& text, char sep = ',');

}  // namespace vtu
