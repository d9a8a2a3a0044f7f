#pragma once

#include <stdexcept>
#include <string>

namespace ftbc {

// Base of every error the library throws. `kind()` is a stable short tag the
// CLI prints in its machine-parseable error line.
class Error : public std::runtime_error {
public:
  Error(std::string kind, const std::string& what)
      : std::runtime_error(what), kind_(std::move(kind)) {}

  const std::string& kind() const noexcept { return kind_; }

private:
  std::string kind_;
};

class DimensionError : public Error {
public:
  explicit DimensionError(const std::string& what) : Error("dimension", what) {}
};

class ArgumentError : public Error {
public:
  explicit ArgumentError(const std::string& what) : Error("argument", what) {}
};

class StructureError : public Error {
public:
  explicit StructureError(const std::string& what) : Error("structure", what) {}
};

class FormatError : public Error {
public:
  explicit FormatError(const std::string& what) : Error("format", what) {}
};

class IoError : public Error {
public:
  explicit IoError(const std::string& what) : Error("io", what) {}
};

class ConfigError : public Error {
public:
  explicit ConfigError(const std::string& what) : Error("config", what) {}
};

class ThresholdError : public Error {
public:
  explicit ThresholdError(const std::string& what) : Error("threshold", what) {}
};

class TrainingError : public Error {
public:
  explicit TrainingError(const std::string& what) : Error("training", what) {}
};

class CalibrationError : public Error {
public:
  explicit CalibrationError(const std::string& what) : Error("calibration", what) {}
};

}  // namespace ftbc
