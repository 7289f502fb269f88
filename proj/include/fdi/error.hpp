#pragma once

#include <stdexcept>
#include <string>

namespace fdi {

/// Broad failure category; the CLI maps each onto a process exit code.
enum class ErrorKind { config = 1, numerical = 2, io = 3 };

class Error : public std::runtime_error {
public:
  Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  ErrorKind kind() const noexcept { return kind_; }

private:
  ErrorKind kind_;
};

/// Malformed or semantically invalid input (case files, configs, serialized artifacts).
class ParseError : public Error {
public:
  explicit ParseError(const std::string& what) : Error(ErrorKind::config, what) {}
  ParseError(const std::string& what, int line, int column)
      : Error(ErrorKind::config, "line " + std::to_string(line) + ", column " +
                                     std::to_string(column) + ": " + what),
        line_(line), column_(column) {}
  int line() const noexcept { return line_; }
  int column() const noexcept { return column_; }

private:
  int line_ = 0;
  int column_ = 0;
};

class NumericalError : public Error {
public:
  explicit NumericalError(const std::string& what) : Error(ErrorKind::numerical, what) {}
};

class IoError : public Error {
public:
  explicit IoError(const std::string& what) : Error(ErrorKind::io, what) {}
};

}  // namespace fdi
