#pragma once

// Minimal TOML-style configuration: `[section]` headers and `key = value`
// lines where a value is a number, boolean, quoted string or flat array.
// Keys are addressed as "section.key".

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

namespace esd {

struct ConfigValue {
  using Scalar = std::variant<bool, std::int64_t, double, std::string>;
  std::variant<Scalar, std::vector<Scalar>> value;

  bool is_array() const { return value.index() == 1; }
  bool as_bool() const;
  std::int64_t as_int() const;
  /// Integers convert to double.
  double as_double() const;
  const std::string& as_string() const;
  std::vector<double> as_double_list() const;
  std::vector<std::int64_t> as_int_list() const;
  std::vector<std::string> as_string_list() const;
  /// Rendered back in file syntax.
  std::string render() const;
};

class ConfigDoc {
public:
  static ConfigDoc parse(std::string_view text);
  static ConfigDoc load(const std::filesystem::path& path);

  /// `section.key=value`; the value uses file syntax, except that a bare
  /// word is accepted as a string.
  void apply_override(std::string_view assignment);
  void set(const std::string& key, ConfigValue value) { values_[key] = std::move(value); }

  bool contains(const std::string& key) const { return values_.contains(key); }
  const ConfigValue& at(const std::string& key) const;
  const std::map<std::string, ConfigValue>& values() const noexcept { return values_; }

  /// Sectioned dump in key order.
  std::string render() const;

private:
  std::map<std::string, ConfigValue> values_;
};

}  // namespace esd
