#pragma once

#include <stdexcept>
#include <string>

namespace statfem {

/// Precondition violated by the caller (bad sizes, out-of-range indices, ...).
class InvalidArgument : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Factorisation or solve failed (non-SPD matrix, singular system).
class NumericalError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Requested operation exists but not for this input (e.g. exact source
/// covariance on a 2D mesh).
class Unsupported : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

}  // namespace statfem
