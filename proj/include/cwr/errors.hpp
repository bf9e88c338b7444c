#pragma once

#include <stdexcept>
#include <string>

namespace cwr {

// Bad input data: malformed files, violated data invariants, out-of-domain
// arguments. CLI maps this to exit code 2.
class ValidationError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Input file does not match the expected column schema.
class SchemaError : public ValidationError {
 public:
  using ValidationError::ValidationError;
};

// Iterative fit or constraint solve failed to converge, or the problem is
// numerically singular. CLI maps this to exit code 3.
class SolverError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Data that is structurally valid but cannot support the requested
// computation (no discordant pairs, all clusters excluded, zero-weight arm).
// CLI maps this to exit code 4.
class DegenerateDataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace cwr
