#pragma once

#include <stdexcept>
#include <string>

namespace spde {

// Parameter values outside the model's domain (nonpositive scales, profile
// crossing zero, tau/eta out of range).
class InvalidParameterError : public std::runtime_error {
public:
  explicit InvalidParameterError(const std::string& what) : std::runtime_error(what) {}
};

// A matrix handed to the Cholesky factorization was not positive definite.
class NotPositiveDefiniteError : public std::runtime_error {
public:
  NotPositiveDefiniteError(const std::string& what, int pivot)
      : std::runtime_error(what), pivot_index(pivot) {}
  int pivot_index;
};

// Malformed input file; line is 1-based.
class ParseError : public std::runtime_error {
public:
  ParseError(const std::string& what, int line)
      : std::runtime_error(what + " (line " + std::to_string(line) + ")"), line_number(line) {}
  int line_number;
};

// A triangle with zero (or negative) area was met during FEM assembly.
class DegenerateElementError : public std::runtime_error {
public:
  explicit DegenerateElementError(const std::string& what, int triangle = -1)
      : std::runtime_error(what), triangle_index(triangle) {}
  int triangle_index;
};

// A fitted model cannot be instantiated on the requested target manifold.
class InvalidTransferError : public std::runtime_error {
public:
  explicit InvalidTransferError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace spde
