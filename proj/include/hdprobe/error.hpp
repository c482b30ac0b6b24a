#pragma once

#include <stdexcept>
#include <string>

namespace hdprobe {

// Base for every error raised by the library. The subclasses map onto the
// CLI exit codes (config 2, missing input 3, numeric failure 4).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Violated precondition: dimension mismatch, duplicate name, bad count.
class InvalidArgument : public Error {
 public:
  using Error::Error;
};

// Malformed text or binary input.
class FormatError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class MissingInput : public Error {
 public:
  MissingInput(const std::string& path, const std::string& producer)
      : Error("missing input '" + path + "' (produced by `" + producer + "`)"),
        path_(path),
        producer_(producer) {}

  const std::string& path() const noexcept { return path_; }
  const std::string& producer() const noexcept { return producer_; }

 private:
  std::string path_;
  std::string producer_;
};

class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace hdprobe
