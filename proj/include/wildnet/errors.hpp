#pragma once

#include <stdexcept>
#include <string>

namespace wildnet {

/// Base of every error raised by the library. `module()` names the
/// component that rejected the input so the CLI can report it.
class Error : public std::runtime_error {
 public:
  Error(std::string module, const std::string& what)
      : std::runtime_error(module + ": " + what), module_(std::move(module)) {}

  const std::string& module() const noexcept { return module_; }

 private:
  std::string module_;
};

/// Non-finite values, out-of-range ids, missing files.
class DataError : public Error {
  using Error::Error;
};

/// Incompatible tensor dimensions.
class ShapeError : public Error {
  using Error::Error;
};

/// Argument outside its documented domain.
class ParameterError : public Error {
  using Error::Error;
};

/// Bad or inconsistent configuration.
class ConfigError : public Error {
  using Error::Error;
};

class EmptyStoreError : public Error {
  using Error::Error;
};

/// Training diverged; the message carries the iteration and term values.
class TrainingError : public Error {
  using Error::Error;
};

}  // namespace wildnet
