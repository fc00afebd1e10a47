#pragma once

#include <stdexcept>
#include <string>

namespace mlsr {

// Caller broke a documented precondition (shapes, sizes, bounds).
class ContractError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// User-facing configuration problem (bad key, value or invariant).
class ConfigError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Text-format parse failure; the message carries the line number.
class ParseError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Binary checkpoint format failure; the message names the field.
class FormatError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// A value went non-finite or an internal invariant did not hold.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace mlsr
