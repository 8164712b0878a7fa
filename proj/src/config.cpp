#include "sourcerec/config.hpp"

#include <cctype>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "sourcerec/io.hpp"

namespace sourcerec {

namespace {

std::string trim(const std::string& text) {
  std::size_t begin = 0;
  std::size_t end = text.size();
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  return text.substr(begin, end - begin);
}

bool valid_key(const std::string& key) {
  if (key.empty()) return false;
  for (char c : key) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '_' &&
        c != '-') {
      return false;
    }
  }
  return true;
}

}  // namespace

ConfigMap ConfigMap::from_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigInvalid("cannot open config file '" + path + "'");
  std::ostringstream text;
  text << in.rdbuf();
  return from_text(text.str(), path);
}

ConfigMap ConfigMap::from_text(const std::string& text, const std::string& name) {
  ConfigMap out;
  out.name_ = name;
  std::istringstream in(text);
  std::string raw;
  int line_no = 0;
  while (std::getline(in, raw)) {
    ++line_no;
    const std::string line = trim(raw);
    if (line.empty() || line[0] == '#') continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos) {
      throw ConfigInvalid(name + ":" + std::to_string(line_no) +
                          ": expected 'key = value', got '" + line + "'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (!valid_key(key)) {
      throw ConfigInvalid(name + ":" + std::to_string(line_no) +
                          ": invalid key '" + key + "'");
    }
    if (value.empty()) {
      throw ConfigInvalid(name + ":" + std::to_string(line_no) + ": key '" +
                          key + "' has an empty value");
    }
    auto [it, inserted] = out.entries_.emplace(key, Entry{value, line_no});
    if (!inserted) {
      throw ConfigInvalid(name + ":" + std::to_string(line_no) +
                          ": duplicate key '" + key + "' (first set on line " +
                          std::to_string(it->second.line) + ")");
    }
  }
  return out;
}

const ConfigMap::Entry* ConfigMap::find(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end()) return nullptr;
  used_.insert(key);
  return &it->second;
}

std::string ConfigMap::where(const std::string& key) const {
  const auto it = entries_.find(key);
  if (it == entries_.end() || it->second.line <= 0) return name_;
  return name_ + ":" + std::to_string(it->second.line);
}

bool ConfigMap::has(const std::string& key) const {
  const bool present = entries_.count(key) > 0;
  if (present) used_.insert(key);
  return present;
}

std::string ConfigMap::require_string(const std::string& key) const {
  const Entry* entry = find(key);
  if (entry == nullptr) {
    throw ConfigInvalid(name_ + ": missing required key '" + key + "'");
  }
  resolved_[key] = entry->value;
  return entry->value;
}

std::string ConfigMap::get_string(const std::string& key,
                                  const std::string& fallback) const {
  const Entry* entry = find(key);
  const std::string value = entry != nullptr ? entry->value : fallback;
  resolved_[key] = value;
  return value;
}

double ConfigMap::require_double(const std::string& key) const {
  const std::string text = require_string(key);
  char* end = nullptr;
  const double value = std::strtod(text.c_str(), &end);
  if (end == text.c_str() || *end != '\0') {
    throw ConfigInvalid(where(key) + ": key '" + key + "' is not a number ('" +
                        text + "')");
  }
  return value;
}

double ConfigMap::get_double(const std::string& key, double fallback) const {
  if (entries_.count(key) > 0) return require_double(key);
  resolved_[key] = format_double(fallback);
  return fallback;
}

std::int64_t ConfigMap::require_int(const std::string& key) const {
  const std::string text = require_string(key);
  char* end = nullptr;
  const long long value = std::strtoll(text.c_str(), &end, 10);
  if (end == text.c_str() || *end != '\0') {
    throw ConfigInvalid(where(key) + ": key '" + key +
                        "' is not an integer ('" + text + "')");
  }
  return static_cast<std::int64_t>(value);
}

std::int64_t ConfigMap::get_int(const std::string& key,
                                std::int64_t fallback) const {
  if (entries_.count(key) > 0) return require_int(key);
  resolved_[key] = std::to_string(fallback);
  return fallback;
}

bool ConfigMap::get_bool(const std::string& key, bool fallback) const {
  const Entry* entry = find(key);
  if (entry == nullptr) {
    resolved_[key] = fallback ? "true" : "false";
    return fallback;
  }
  const std::string& text = entry->value;
  bool value = fallback;
  if (text == "true" || text == "yes" || text == "1") {
    value = true;
  } else if (text == "false" || text == "no" || text == "0") {
    value = false;
  } else {
    throw ConfigInvalid(where(key) + ": key '" + key +
                        "' is not a boolean ('" + text +
                        "'); use true/false");
  }
  resolved_[key] = value ? "true" : "false";
  return value;
}

std::vector<double> ConfigMap::require_list(const std::string& key) const {
  const std::string text = require_string(key);
  std::vector<double> values;
  std::size_t begin = 0;
  while (begin <= text.size()) {
    std::size_t comma = text.find(',', begin);
    if (comma == std::string::npos) comma = text.size();
    const std::string piece = trim(text.substr(begin, comma - begin));
    if (piece.empty()) {
      throw ConfigInvalid(where(key) + ": key '" + key +
                          "' has an empty list element");
    }
    char* end = nullptr;
    const double value = std::strtod(piece.c_str(), &end);
    if (end == piece.c_str() || *end != '\0') {
      throw ConfigInvalid(where(key) + ": key '" + key +
                          "' has a non-numeric list element ('" + piece + "')");
    }
    values.push_back(value);
    begin = comma + 1;
    if (comma == text.size()) break;
  }
  if (values.empty()) {
    throw ConfigInvalid(where(key) + ": key '" + key + "' is an empty list");
  }
  return values;
}

void ConfigMap::set(const std::string& key, const std::string& value) {
  entries_[key] = Entry{value, 0};
}

void ConfigMap::reject_unused() const {
  for (const auto& [key, entry] : entries_) {
    if (used_.count(key) == 0) {
      throw ConfigInvalid(where(key) + ": unknown key '" + key + "'");
    }
  }
}

std::string ConfigMap::manifest() const {
  std::ostringstream out;
  for (const auto& [key, value] : resolved_) {
    out << key << " = " << value << "\n";
  }
  return out.str();
}

}  // namespace sourcerec
