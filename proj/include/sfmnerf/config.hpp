#pragma once

#include <cstdint>
#include <map>
#include <string>

namespace sfmnerf {

// Flat key=value text. '#' starts a comment; blank lines are ignored.
class KeyValues {
 public:
  static KeyValues parse(const std::string& text);
  static KeyValues read(const std::string& path);

  bool has(const std::string& key) const { return values_.count(key) != 0; }
  void set(const std::string& key, const std::string& value) { values_[key] = value; }
  const std::map<std::string, std::string>& values() const { return values_; }

  std::string get_string(const std::string& key, const std::string& fallback) const;
  double get_double(const std::string& key, double fallback) const;
  std::int64_t get_int(const std::string& key, std::int64_t fallback) const;
  bool get_bool(const std::string& key, bool fallback) const;

  std::string to_string() const;

 private:
  std::map<std::string, std::string> values_;
};

}  // namespace sfmnerf
