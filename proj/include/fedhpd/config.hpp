#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <string_view>
#include <vector>

namespace fedhpd {

/// Flat configuration text: one `dotted.key = value` per line, `#` starts a comment.
///
/// A value is a number, `true`/`false`, a bare word, a double-quoted string, or a bracketed list of
/// those separated by commas. Values are stored as written and converted on access, so every
/// conversion error names its key. Later assignments to the same key replace earlier ones.
class ConfigFile {
 public:
  static ConfigFile parse(std::istream& in, std::string_view source = "<config>");
  static ConfigFile parse_text(std::string_view text, std::string_view source = "<config>");
  static ConfigFile load(const std::filesystem::path& path);

  /// Applies a `key=value` override (same value grammar as the file).
  void set(std::string_view assignment);
  void set(const std::string& key, const std::string& raw_value);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  const std::map<std::string, std::string>& entries() const { return values_; }

  std::string get_string(const std::string& key) const;
  std::int64_t get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  /// A scalar value is accepted as a one-element list.
  std::vector<std::string> get_list(const std::string& key) const;
  std::vector<std::int64_t> get_int_list(const std::string& key) const;

 private:
  std::map<std::string, std::string> values_;
};

/// Conversions shared with list elements; `key` is only used in error messages.
std::string unquote(std::string_view raw, const std::string& key);
std::int64_t parse_int(std::string_view raw, const std::string& key);
double parse_double(std::string_view raw, const std::string& key);
bool parse_bool(std::string_view raw, const std::string& key);

}  // namespace fedhpd
