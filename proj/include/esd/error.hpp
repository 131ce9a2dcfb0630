#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace esd {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Raised for malformed input files; carries the 1-based line number.
class ParseError : public Error {
public:
  ParseError(std::size_t line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  std::size_t line() const noexcept { return line_; }

private:
  std::size_t line_;
};

class UnknownContextError : public Error {
public:
  explicit UnknownContextError(const std::string& key)
      : Error("unknown context '" + key + "'"), key_(key) {}

  const std::string& key() const noexcept { return key_; }

private:
  std::string key_;
};

class ProtocolError : public Error {
public:
  using Error::Error;
};

}  // namespace esd
