#pragma once

#include <stdexcept>
#include <string>

namespace dealab {

/// Precondition on a numeric argument failed (probe frequency, waveform time, ...).
class RangeError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// Safety interlock refused an operation.
class InterlockViolation : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class GeometryError : public std::domain_error {
 public:
  using std::domain_error::domain_error;
};

class SamplingError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class InsufficientDataError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class SelectionError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class StorageError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ValidationError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

}  // namespace dealab
