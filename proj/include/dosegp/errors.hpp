#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace dosegp {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Malformed input file. row is the 1-based line number in the source text,
// 0 when the problem is not tied to a single line.
struct ParseError : Error {
  ParseError(const std::string& what, std::size_t row, std::string column)
      : Error(format(what, row, column)), row(row), column(std::move(column)) {}

  std::size_t row;
  std::string column;

 private:
  static std::string format(const std::string& what, std::size_t row, const std::string& column) {
    std::string msg = what;
    if (row > 0) msg += " (row " + std::to_string(row);
    if (!column.empty()) msg += (row > 0 ? ", column " : " (column ") + column;
    if (row > 0 || !column.empty()) msg += ")";
    return msg;
  }
};

struct ValidationError : Error {
  using Error::Error;
};

struct FactorizationError : Error {
  FactorizationError(std::size_t pivot, double value)
      : Error("Gram matrix is not positive definite at pivot " + std::to_string(pivot) +
              " (pivot value " + std::to_string(value) + ")"),
        pivot(pivot) {}

  std::size_t pivot;
};

struct ConvergenceError : Error {
  ConvergenceError(const std::string& what, double gradient_norm)
      : Error(what + " (final gradient norm " + std::to_string(gradient_norm) + ")"),
        gradient_norm(gradient_norm) {}

  double gradient_norm;
};

struct InsufficientDataError : Error {
  using Error::Error;
};

// model-store failures, one type per failure kind
struct FormatError : Error {
  using Error::Error;
};

struct VersionError : Error {
  VersionError(int found, int supported)
      : Error("artifact format_version " + std::to_string(found) +
              " is not supported by this build (supports " + std::to_string(supported) + ")"),
        found(found),
        supported(supported) {}

  int found;
  int supported;
};

struct DigestError : Error {
  using Error::Error;
};

}  // namespace dosegp
