#pragma once

#include <stdexcept>
#include <string>

namespace atalp {

/// Invalid or inconsistent configuration (unknown architecture, bad attack budget, unknown key).
class ConfigError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

/// Data that violates a shape or range contract.
class InputError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

class IoError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// A persisted artifact was written by an incompatible format version.
class IncompatibleError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Training produced a non-finite loss.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

}  // namespace atalp
