#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "sourcerec/types.hpp"

namespace sourcerec {

/// Flat `key = value` configuration with dotted section keys, `#` comments,
/// and blank lines. Lookups remember the line of each entry so diagnostics
/// can point at the offending input, mark keys as consumed so a command can
/// reject unknown keys, and record the resolved value (explicit or default)
/// so the run can be echoed back out as a manifest.
class ConfigMap {
 public:
  static ConfigMap from_file(const std::string& path);
  static ConfigMap from_text(const std::string& text, const std::string& name);

  bool has(const std::string& key) const;

  std::string require_string(const std::string& key) const;
  std::string get_string(const std::string& key,
                         const std::string& fallback) const;
  double require_double(const std::string& key) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t require_int(const std::string& key) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;
  /// Comma-separated list of numbers.
  std::vector<double> require_list(const std::string& key) const;

  /// Inserts or overwrites an entry (used for CLI flag overrides).
  void set(const std::string& key, const std::string& value);

  /// Throws ConfigInvalid naming the first entry never consumed by a lookup.
  void reject_unused() const;

  /// The resolved view of the run: every consumed key with its final value,
  /// rendered as sorted `key = value` lines. Feeding this text back through
  /// the same command reproduces the run.
  std::string manifest() const;

  const std::string& name() const { return name_; }

 private:
  struct Entry {
    std::string value;
    int line = 0;
  };

  std::string where(const std::string& key) const;
  const Entry* find(const std::string& key) const;

  std::string name_ = "<config>";
  std::map<std::string, Entry> entries_;
  mutable std::set<std::string> used_;
  mutable std::map<std::string, std::string> resolved_;
};

}  // namespace sourcerec
