#pragma once

#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace deepcov {

/// Flat `key = value` configuration text. Blank lines and `#` comments are
/// ignored; keys may repeat (list-valued entries such as conv layers).
class KvConfig {
 public:
  static KvConfig parse(std::istream& in);
  static KvConfig load(const std::filesystem::path& path);

  std::optional<std::string> get(const std::string& key) const;  // last occurrence
  std::vector<std::string> get_all(const std::string& key) const;
  bool has(const std::string& key) const { return get(key).has_value(); }

  /// Replaces every occurrence of key with a single entry.
  void set(const std::string& key, const std::string& value);
  void append(const std::string& key, const std::string& value);

  const std::vector<std::pair<std::string, std::string>>& entries() const { return entries_; }
  std::string to_string() const;

 private:
  std::vector<std::pair<std::string, std::string>> entries_;
};

std::vector<std::string> split(const std::string& text, char sep);
std::string trim(const std::string& text);

double parse_double(const std::string& text, const std::string& what);
long long parse_int(const std::string& text, const std::string& what);

}  // namespace deepcov
