#pragma once

// Flat key = value run configuration. Every key has a declared type and a
// default; unknown keys, duplicates and malformed values are ConfigErrors.

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <utility>
#include <vector>

namespace texhash {

enum class ValueType { Int, Double, Bool, String, IntList };

struct ConfigKey {
  const char* name;
  ValueType type;
  const char* default_value;
  const char* help;
};

// All recognised keys in echo order.
const std::vector<ConfigKey>& config_keys();

class RunConfig {
 public:
  RunConfig();  // all defaults

  static RunConfig parse(const std::string& text, const std::string& source = "config");
  static RunConfig load(const std::filesystem::path& path);

  // Validates the key and value; later calls override earlier ones.
  void set(const std::string& key, const std::string& value);
  // "key=value"
  void set_assignment(const std::string& assignment);

  int get_int(const std::string& key) const;
  double get_double(const std::string& key) const;
  bool get_bool(const std::string& key) const;
  std::uint64_t get_u64(const std::string& key) const;
  const std::string& get_string(const std::string& key) const;
  std::vector<int> get_int_list(const std::string& key) const;

  // Every key with its effective value, in declaration order.
  std::vector<std::pair<std::string, std::string>> echo() const;
  std::string to_text() const;

 private:
  const std::string& raw(const std::string& key) const;
  std::map<std::string, std::string> values_;
};

}  // namespace texhash
