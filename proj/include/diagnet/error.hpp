#pragma once

#include <stdexcept>
#include <string>

namespace diagnet {

/// Index outside the feature or landmark range of a schema.
class IndexError : public std::out_of_range {
 public:
  using std::out_of_range::out_of_range;
};

/// A caller broke a documented precondition.
class ContractViolation : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

/// Malformed, inconsistent or unusable input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Artifacts built against different feature layouts.
class SchemaMismatch : public DataError {
 public:
  using DataError::DataError;
};

}  // namespace diagnet
