#include "fedhpd/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "fedhpd/error.hpp"

namespace fedhpd {

namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.remove_prefix(1);
  while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.remove_suffix(1);
  return s;
}

bool valid_key(std::string_view key) {
  if (key.empty() || key.front() == '.' || key.back() == '.') return false;
  for (char c : key) {
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '.' || c == '-')) return false;
  }
  return key.find("..") == std::string_view::npos;
}

/// Drops a trailing comment that is not inside a quoted string.
std::string_view strip_comment(std::string_view line) {
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    if (line[i] == '"') quoted = !quoted;
    if (line[i] == '#' && !quoted) return line.substr(0, i);
  }
  return line;
}

/// Splits the inside of a bracketed list on commas outside quotes.
std::vector<std::string> split_list(std::string_view body, const std::string& key) {
  std::vector<std::string> out;
  body = trim(body);
  if (body.empty()) return out;
  bool quoted = false;
  std::size_t start = 0;
  for (std::size_t i = 0; i <= body.size(); ++i) {
    if (i < body.size() && body[i] == '"') quoted = !quoted;
    if (i == body.size() || (body[i] == ',' && !quoted)) {
      std::string_view item = trim(body.substr(start, i - start));
      if (item.empty()) throw ConfigError("config key '" + key + "': empty list element");
      out.emplace_back(item);
      start = i + 1;
    }
  }
  if (quoted) throw ConfigError("config key '" + key + "': unterminated string");
  return out;
}

void check_value(std::string_view value, const std::string& key) {
  if (value.empty()) throw ConfigError("config key '" + key + "': missing value");
  if (value.front() == '[') {
    if (value.back() != ']') throw ConfigError("config key '" + key + "': unterminated list");
    split_list(value.substr(1, value.size() - 2), key);
  } else if (value.front() == '"') {
    unquote(value, key);
  }
}

}  // namespace

std::string unquote(std::string_view raw, const std::string& key) {
  raw = trim(raw);
  if (raw.empty() || raw.front() != '"') return std::string(raw);
  if (raw.size() < 2 || raw.back() != '"') throw ConfigError("config key '" + key + "': unterminated string");
  std::string_view body = raw.substr(1, raw.size() - 2);
  if (body.find('"') != std::string_view::npos) throw ConfigError("config key '" + key + "': stray quote");
  return std::string(body);
}

std::int64_t parse_int(std::string_view raw, const std::string& key) {
  const std::string s = unquote(raw, key);
  std::int64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || s.empty())
    throw ConfigError("config key '" + key + "': expected an integer, got '" + s + "'");
  return v;
}

double parse_double(std::string_view raw, const std::string& key) {
  const std::string s = unquote(raw, key);
  double v = 0.0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size() || s.empty() || !std::isfinite(v))
    throw ConfigError("config key '" + key + "': expected a finite number, got '" + s + "'");
  return v;
}

bool parse_bool(std::string_view raw, const std::string& key) {
  const std::string s = unquote(raw, key);
  if (s == "true") return true;
  if (s == "false") return false;
  throw ConfigError("config key '" + key + "': expected true or false, got '" + s + "'");
}

ConfigFile ConfigFile::parse(std::istream& in, std::string_view source) {
  ConfigFile cfg;
  std::string line;
  int number = 0;
  while (std::getline(in, line)) {
    ++number;
    std::string_view body = trim(strip_comment(line));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    const std::string where = std::string(source) + ":" + std::to_string(number);
    if (eq == std::string_view::npos) throw ConfigError(where + ": expected 'key = value'");
    const std::string key(trim(body.substr(0, eq)));
    if (!valid_key(key)) throw ConfigError(where + ": invalid key '" + key + "'");
    cfg.set(key, std::string(trim(body.substr(eq + 1))));
  }
  return cfg;
}

ConfigFile ConfigFile::parse_text(std::string_view text, std::string_view source) {
  std::istringstream in{std::string(text)};
  return parse(in, source);
}

ConfigFile ConfigFile::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open config file " + path.string());
  return parse(in, path.string());
}

void ConfigFile::set(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw ConfigError("override '" + std::string(assignment) + "': expected key=value");
  const std::string key(trim(assignment.substr(0, eq)));
  if (!valid_key(key)) throw ConfigError("override: invalid key '" + key + "'");
  set(key, std::string(trim(assignment.substr(eq + 1))));
}

void ConfigFile::set(const std::string& key, const std::string& raw_value) {
  const std::string value(trim(raw_value));
  check_value(value, key);
  values_[key] = value;
}

std::string ConfigFile::get_string(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
  if (it->second.front() == '[') throw ConfigError("config key '" + key + "': expected a scalar, got a list");
  return unquote(it->second, key);
}

std::int64_t ConfigFile::get_int(const std::string& key) const { return parse_int(get_string(key), key); }

double ConfigFile::get_double(const std::string& key) const { return parse_double(get_string(key), key); }

bool ConfigFile::get_bool(const std::string& key) const { return parse_bool(get_string(key), key); }

std::vector<std::string> ConfigFile::get_list(const std::string& key) const {
  const auto it = values_.find(key);
  if (it == values_.end()) throw ConfigError("missing config key '" + key + "'");
  const std::string& v = it->second;
  if (v.front() != '[') return {v};
  return split_list(std::string_view(v).substr(1, v.size() - 2), key);
}

std::vector<std::int64_t> ConfigFile::get_int_list(const std::string& key) const {
  std::vector<std::int64_t> out;
  for (const auto& item : get_list(key)) out.push_back(parse_int(item, key));
  return out;
}

}  // namespace fedhpd
