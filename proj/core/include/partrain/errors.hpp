#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace partrain {

/// Base class for every error raised by the library.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Tensor or parameter shapes do not agree.
class ShapeError : public Error {
 public:
  using Error::Error;
};

/// A NaN or infinity appeared in a forward or backward pass.
class NumericError : public Error {
 public:
  using Error::Error;
};

/// Malformed network description. `line()` is 1-based when the spec came from
/// text, 0 otherwise. `layer()` is the offending layer index, if any.
class SpecError : public Error {
 public:
  static constexpr std::size_t npos = static_cast<std::size_t>(-1);

  explicit SpecError(const std::string& what, std::size_t line = 0,
                     std::size_t layer = npos)
      : Error(line == 0 ? what : "line " + std::to_string(line) + ": " + what),
        line_(line),
        layer_(layer) {}

  std::size_t line() const noexcept { return line_; }
  std::size_t layer() const noexcept { return layer_; }

 private:
  std::size_t line_;
  std::size_t layer_;
};

class PartitionError : public Error {
 public:
  using Error::Error;
};

class MergeError : public Error {
 public:
  using Error::Error;
};

/// Dataset files, checkpoints and plan files that do not follow their format.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Invalid experiment or training configuration.
class ConfigError : public Error {
 public:
  using Error::Error;
};

}  // namespace partrain
