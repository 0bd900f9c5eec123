#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace ntp {

enum class ErrorKind {
  UndeclaredSymbol,
  DuplicateSymbol,
  UnknownSymbol,
  ArityMismatch,
  DimClassConflict,
  NonPSD,
  NonPSDExtension,
  ShapeMismatch,
  CapExceeded,
  NonInvertibleSeries,
  NotAlternating,
  UnboundedDiagonal,
  SyntaxError,
  InvalidArgument,
};

std::string_view to_string(ErrorKind kind);

/// Every failure raised by the library carries a machine-readable kind so the
/// CLI can emit it as a CSV row. Errors tied to source text carry a 1-based
/// line/column (0 when unknown).
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message, int line = 0, int col = 0)
      : std::runtime_error(message), kind_(kind), line_(line), col_(col) {}

  ErrorKind kind() const noexcept { return kind_; }
  int line() const noexcept { return line_; }
  int col() const noexcept { return col_; }

 private:
  ErrorKind kind_;
  int line_;
  int col_;
};

class SyntaxError : public Error {
 public:
  SyntaxError(int line, int col, const std::string& message)
      : Error(ErrorKind::SyntaxError, message, line, col) {}
};

}  // namespace ntp
