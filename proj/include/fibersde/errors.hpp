// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <stdexcept>
#include <string>

namespace fibersde {

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

class ShapeError : public Error {
public:
  using Error::Error;
};

class PreconditionError : public Error {
public:
  using Error::Error;
};

class AssemblyError : public Error {
public:
  using Error::Error;
};

class NonConvergenceError : public Error {
public:
  NonConvergenceError(const std::string& what, double last_defect)
      : Error(what), last_defect_(last_defect) {}
  double last_defect() const noexcept { return last_defect_; }

private:
  double last_defect_;
};

class BlowUpError : public Error {
public:
  using Error::Error;
};

class IoError : public Error {
public:
  using Error::Error;
};

// Raised by the config parser; line is 0 when the problem is not tied to a
// single line (missing keys, cross-key constraints).
class ConfigError : public Error {
public:
  ConfigError(std::string key, int line, const std::string& message)
      : Error(format(key, line, message)), key_(std::move(key)), line_(line) {}

  const std::string& key() const noexcept { return key_; }
  int line() const noexcept { return line_; }

private:
  static std::string format(const std::string& key, int line, const std::string& message) {
    std::string out = "config";
    if (line > 0) out += " line " + std::to_string(line);
    if (!key.empty()) out += " key '" + key + "'";
    return out + ": " + message;
  }

  std::string key_;
  int line_;
};

}  // namespace fibersde
