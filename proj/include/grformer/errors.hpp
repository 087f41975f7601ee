#pragma once

#include <stdexcept>
#include <string>

namespace grf {

// Shape or channel-count disagreement between operands.
class DimensionError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Caller violated an operation precondition that is not a shape problem.
class ContractError : public std::logic_error {
 public:
  using std::logic_error::logic_error;
};

// Non-finite value produced or consumed by a forward op.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Malformed config text, weight container, or image file.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Config text that does not parse; carries the offending line and field.
class ConfigError : public FormatError {
 public:
  using FormatError::FormatError;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace grf
