#include "esd/config.hpp"

#include <cctype>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "esd/error.hpp"

namespace esd {
namespace {

std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  return s;
}

// Drops a trailing comment that is not inside a string.
std::string_view strip_comment(std::string_view s) {
  bool quoted = false;
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (quoted && s[i] == '\\') {
      ++i;
    } else if (s[i] == '"') {
      quoted = !quoted;
    } else if (!quoted && s[i] == '#') {
      return s.substr(0, i);
    }
  }
  return s;
}

bool is_key(std::string_view k) {
  if (k.empty()) return false;
  for (char c : k)
    if (!(std::isalnum(static_cast<unsigned char>(c)) || c == '_' || c == '-')) return false;
  return true;
}

std::string unquote(std::string_view s) {
  std::string out;
  for (std::size_t i = 1; i + 1 < s.size(); ++i) {
    if (s[i] != '\\') {
      out.push_back(s[i]);
      continue;
    }
    if (++i + 1 >= s.size()) throw Error("dangling escape in string");
    switch (s[i]) {
      case 'n': out.push_back('\n'); break;
      case 't': out.push_back('\t'); break;
      case '"': out.push_back('"'); break;
      case '\\': out.push_back('\\'); break;
      default: throw Error(std::string("unknown escape \\") + s[i]);
    }
  }
  return out;
}

ConfigValue::Scalar parse_scalar(std::string_view s, bool bare_strings) {
  s = trim(s);
  if (s.empty()) throw Error("missing value");
  if (s.front() == '"') {
    if (s.size() < 2 || s.back() != '"') throw Error("unterminated string");
    return unquote(s);
  }
  if (s == "true") return true;
  if (s == "false") return false;
  std::int64_t i = 0;
  auto [ip, iec] = std::from_chars(s.data(), s.data() + s.size(), i);
  if (iec == std::errc() && ip == s.data() + s.size()) return i;
  double d = 0.0;
  auto [dp, dec] = std::from_chars(s.data(), s.data() + s.size(), d);
  if (dec == std::errc() && dp == s.data() + s.size() && std::isfinite(d)) return d;
  if (bare_strings) return std::string(s);
  throw Error("cannot parse value '" + std::string(s) + "'");
}

std::vector<std::string_view> split_array(std::string_view body) {
  std::vector<std::string_view> parts;
  bool quoted = false;
  std::size_t start = 0;
  for (std::size_t i = 0; i < body.size(); ++i) {
    if (quoted && body[i] == '\\') {
      ++i;
    } else if (body[i] == '"') {
      quoted = !quoted;
    } else if (!quoted && body[i] == ',') {
      parts.push_back(body.substr(start, i - start));
      start = i + 1;
    }
  }
  if (quoted) throw Error("unterminated string in array");
  auto last = trim(body.substr(start));
  if (!last.empty()) parts.push_back(last);
  for (auto p : parts)
    if (trim(p).empty()) throw Error("empty array element");
  return parts;
}

ConfigValue parse_value(std::string_view s, bool bare_strings) {
  s = trim(s);
  if (!s.empty() && s.front() == '[') {
    if (s.back() != ']') throw Error("unterminated array");
    std::vector<ConfigValue::Scalar> items;
    for (auto part : split_array(s.substr(1, s.size() - 2))) items.push_back(parse_scalar(part, bare_strings));
    return {items};
  }
  return {parse_scalar(s, bare_strings)};
}

std::string render_scalar(const ConfigValue::Scalar& v) {
  if (auto b = std::get_if<bool>(&v)) return *b ? "true" : "false";
  if (auto i = std::get_if<std::int64_t>(&v)) return std::to_string(*i);
  if (auto d = std::get_if<double>(&v)) {
    char buf[64];
    auto [p, ec] = std::to_chars(buf, buf + sizeof buf, *d);
    std::string out(buf, p);
    if (out.find_first_of(".e") == std::string::npos) out += ".0";
    return out;
  }
  std::string out = "\"";
  for (char c : std::get<std::string>(v)) {
    if (c == '"' || c == '\\') out.push_back('\\');
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    if (c == '\t') {
      out += "\\t";
      continue;
    }
    out.push_back(c);
  }
  return out + "\"";
}

const ConfigValue::Scalar& scalar_of(const ConfigValue& v) {
  if (v.is_array()) throw Error("expected a single value, got an array");
  return std::get<0>(v.value);
}

std::vector<ConfigValue::Scalar> list_of(const ConfigValue& v) {
  if (v.is_array()) return std::get<1>(v.value);
  return {std::get<0>(v.value)};
}

double scalar_double(const ConfigValue::Scalar& s) {
  if (auto i = std::get_if<std::int64_t>(&s)) return static_cast<double>(*i);
  if (auto d = std::get_if<double>(&s)) return *d;
  throw Error("expected a number");
}

std::int64_t scalar_int(const ConfigValue::Scalar& s) {
  if (auto i = std::get_if<std::int64_t>(&s)) return *i;
  throw Error("expected an integer");
}

}  // namespace

bool ConfigValue::as_bool() const {
  if (auto b = std::get_if<bool>(&scalar_of(*this))) return *b;
  throw Error("expected a boolean");
}

std::int64_t ConfigValue::as_int() const { return scalar_int(scalar_of(*this)); }

double ConfigValue::as_double() const { return scalar_double(scalar_of(*this)); }

const std::string& ConfigValue::as_string() const {
  if (auto s = std::get_if<std::string>(&scalar_of(*this))) return *s;
  throw Error("expected a string");
}

std::vector<double> ConfigValue::as_double_list() const {
  std::vector<double> out;
  for (const auto& s : list_of(*this)) out.push_back(scalar_double(s));
  return out;
}

std::vector<std::int64_t> ConfigValue::as_int_list() const {
  std::vector<std::int64_t> out;
  for (const auto& s : list_of(*this)) out.push_back(scalar_int(s));
  return out;
}

std::vector<std::string> ConfigValue::as_string_list() const {
  std::vector<std::string> out;
  for (const auto& s : list_of(*this)) {
    if (auto str = std::get_if<std::string>(&s)) {
      out.push_back(*str);
    } else {
      throw Error("expected a list of strings");
    }
  }
  return out;
}

std::string ConfigValue::render() const {
  if (!is_array()) return render_scalar(std::get<0>(value));
  std::string out = "[";
  const auto& items = std::get<1>(value);
  for (std::size_t i = 0; i < items.size(); ++i) out += (i ? ", " : "") + render_scalar(items[i]);
  return out + "]";
}

ConfigDoc ConfigDoc::parse(std::string_view text) {
  ConfigDoc doc;
  std::string section;
  std::size_t lineno = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto end = std::min(text.find('\n', pos), text.size());
    const auto line = trim(strip_comment(text.substr(pos, end - pos)));
    pos = end + 1;
    ++lineno;
    if (line.empty()) continue;
    try {
      if (line.front() == '[') {
        if (line.back() != ']') throw Error("malformed section header");
        const auto name = trim(line.substr(1, line.size() - 2));
        if (!is_key(name)) throw Error("bad section name");
        section = std::string(name);
        continue;
      }
      const auto eq = line.find('=');
      if (eq == std::string_view::npos) throw Error("expected key = value");
      const auto key = trim(line.substr(0, eq));
      if (!is_key(key)) throw Error("bad key '" + std::string(key) + "'");
      if (section.empty()) throw Error("key outside a [section]");
      const std::string full = section + "." + std::string(key);
      if (doc.values_.contains(full)) throw Error("duplicate key '" + full + "'");
      doc.values_[full] = parse_value(line.substr(eq + 1), false);
    } catch (const ParseError&) {
      throw;
    } catch (const Error& e) {
      throw ParseError(lineno, e.what());
    }
  }
  return doc;
}

ConfigDoc ConfigDoc::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error("cannot open config " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse(ss.str());
}

void ConfigDoc::apply_override(std::string_view assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string_view::npos) throw Error("override must look like section.key=value");
  const auto key = trim(assignment.substr(0, eq));
  const auto dot = key.find('.');
  if (dot == std::string_view::npos || !is_key(key.substr(0, dot)) || !is_key(key.substr(dot + 1)))
    throw Error("override key must be section.key");
  values_[std::string(key)] = parse_value(assignment.substr(eq + 1), true);
}

const ConfigValue& ConfigDoc::at(const std::string& key) const {
  auto it = values_.find(key);
  if (it == values_.end()) throw Error("missing config key '" + key + "'");
  return it->second;
}

std::string ConfigDoc::render() const {
  std::string out;
  std::string current;
  bool first = true;
  for (const auto& [key, value] : values_) {
    const auto dot = key.find('.');
    const std::string section = key.substr(0, dot);
    const std::string name = key.substr(dot + 1);
    if (first || section != current) {
      out += (first ? "[" : "\n[") + section + "]\n";
      current = section;
      first = false;
    }
    out += name + " = " + value.render() + "\n";
  }
  return out;
}

}  // namespace esd
