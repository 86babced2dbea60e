#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

namespace hanet {

/// Flat key=value configuration over a fixed set of known keys.
///
/// Text form: one `key = value` per line, `#` starts a comment. Unknown keys
/// and malformed lines raise ConfigError. `to_text` writes every key in sorted
/// order, so parse(to_text()) reproduces the configuration exactly.
class RunConfig {
 public:
  RunConfig();

  static RunConfig parse(const std::string& text, const std::string& origin = "<text>");
  static RunConfig load(const std::filesystem::path& path);

  void set(const std::string& key, const std::string& value);
  void merge_text(const std::string& text, const std::string& origin);
  bool has(const std::string& key) const { return values_.count(key) != 0; }

  const std::string& get(const std::string& key) const;
  double get_double(const std::string& key) const;
  long get_int(const std::string& key) const;
  std::size_t get_size(const std::string& key) const;
  bool get_bool(const std::string& key) const;

  // Only the keys whose names start with one of `prefixes`.
  std::string to_text(const std::vector<std::string>& prefixes = {}) const;
  const std::map<std::string, std::string>& values() const { return values_; }

  bool operator==(const RunConfig& other) const { return values_ == other.values_; }

  static const std::map<std::string, std::string>& defaults();

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace hanet
