#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace metaopf {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Malformed or semantically invalid input (case files, configs, corpus files).
class InputError : public Error {
 public:
  using Error::Error;
};

class CaseSyntaxError : public InputError {
 public:
  CaseSyntaxError(const std::string& what, std::size_t line, std::size_t column)
      : InputError("line " + std::to_string(line) + ", column " + std::to_string(column) + ": " +
                   what),
        line_(line),
        column_(column) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t column() const noexcept { return column_; }

 private:
  std::size_t line_;
  std::size_t column_;
};

/// Numerical failure: divergence, singular systems, non-finite values.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// An output already exists and overwriting was not requested.
class OverwriteError : public Error {
 public:
  using Error::Error;
};

}  // namespace metaopf
