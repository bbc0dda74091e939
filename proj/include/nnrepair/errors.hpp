#pragma once

#include <stdexcept>
#include <string>

namespace nnrepair {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class FormatError : public Error {
 public:
  using Error::Error;
};

/// Raised when the subject offers no failing target-class samples (or no
/// passing samples to protect). Callers treat it as a no-op run.
class NothingToRepair : public Error {
 public:
  using Error::Error;
};

}  // namespace nnrepair
