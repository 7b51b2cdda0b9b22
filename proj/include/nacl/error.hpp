#pragma once

#include <stdexcept>
#include <string>

namespace nacl {

// Base for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Operand shapes do not conform for an operation.
class ShapeError : public Error {
 public:
  using Error::Error;
};

// A precondition on values was violated (zero row, bad index, empty set...).
class ValueError : public Error {
 public:
  using Error::Error;
};

// Invalid user-supplied configuration. `field` names the offending key.
class ConfigError : public Error {
 public:
  ConfigError(std::string field, const std::string& message)
      : Error(field + ": " + message), field_(std::move(field)) {}

  const std::string& field() const noexcept { return field_; }

 private:
  std::string field_;
};

// Training or evaluation produced a non-finite value.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class CheckpointError : public Error {
 public:
  enum class Kind { kIo, kCorrupt, kVersion };

  CheckpointError(Kind kind, const std::string& message)
      : Error(message), kind_(kind) {}

  Kind kind() const noexcept { return kind_; }

 private:
  Kind kind_;
};

}  // namespace nacl
