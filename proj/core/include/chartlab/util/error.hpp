#pragma once

#include <stdexcept>
#include <string>

namespace chartlab {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Caller broke a documented precondition (bad shapes, out-of-range index).
class ContractError : public Error {
 public:
  using Error::Error;
};

/// A non-finite value was produced; the message names the primitive.
class NumericalError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  ConfigError(std::string key, const std::string& what)
      : Error(key.empty() ? what : key + ": " + what), key_(std::move(key)) {}
  const std::string& key() const noexcept { return key_; }

 private:
  std::string key_;
};

class IoError : public Error {
 public:
  IoError(std::string path, const std::string& what)
      : Error(path + ": " + what), path_(std::move(path)) {}
  const std::string& path() const noexcept { return path_; }

 private:
  std::string path_;
};

/// Malformed or truncated on-disk artifact.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Artifact was produced under a different configuration.
class DigestError : public Error {
 public:
  using Error::Error;
};

}  // namespace chartlab
