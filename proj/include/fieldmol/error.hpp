#pragma once

#include <stdexcept>
#include <string>

namespace fieldmol {

/// Malformed text input (XYZ, element tables, ...). line is 1-based, 0 when
/// the failure is not tied to a specific line.
class ParseError : public std::runtime_error {
 public:
  ParseError(const std::string& msg, int line = 0)
      : std::runtime_error(line > 0 ? "line " + std::to_string(line) + ": " + msg : msg),
        line_(line) {}

  int line() const { return line_; }

 private:
  int line_;
};

enum class PersistErrc {
  kIo,
  kBadMagic,
  kVersionTooNew,
  kBadManifest,
  kOffsetOverflow,
  kShapeMismatch,
};

class PersistError : public std::runtime_error {
 public:
  PersistError(PersistErrc code, const std::string& msg)
      : std::runtime_error(msg), code_(code) {}

  PersistErrc code() const { return code_; }

 private:
  PersistErrc code_;
};

/// Invalid configuration value; key_path identifies the offending key
/// (e.g. "sampler.delta").
class ConfigError : public std::runtime_error {
 public:
  ConfigError(const std::string& key_path, const std::string& msg)
      : std::runtime_error(key_path.empty() ? msg : key_path + ": " + msg),
        key_path_(key_path) {}

  const std::string& key_path() const { return key_path_; }

 private:
  std::string key_path_;
};

/// Non-finite values where the numerics must abort (exit code 3 on the CLI).
class NumericError : public std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace fieldmol
