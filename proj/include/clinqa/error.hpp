#pragma once

#include <stdexcept>
#include <string>

namespace clinqa {

/// Base class for all errors raised by this library.
class Error : public std::runtime_error {
 public:
  explicit Error(const std::string& what) : std::runtime_error(what) {}
};

/// A line-oriented input file violated its schema. Lines are 1-based.
class ParseError : public Error {
 public:
  ParseError(int line, const std::string& what)
      : Error("line " + std::to_string(line) + ": " + what), line_(line) {}

  int line() const { return line_; }

 private:
  int line_ = 0;
};

/// A remote (or mock) text-generation call failed terminally.
class BackendError : public Error {
 public:
  explicit BackendError(const std::string& what, int http_status = 0)
      : Error(what), http_status_(http_status) {}

  // 0 when the failure was not an HTTP status (connect error, bad payload).
  int http_status() const { return http_status_; }

 private:
  int http_status_ = 0;
};

/// A caller violated an operation precondition.
class ContractError : public Error {
 public:
  explicit ContractError(const std::string& what) : Error(what) {}
};

}  // namespace clinqa
