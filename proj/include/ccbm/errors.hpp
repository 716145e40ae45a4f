#pragma once

#include <stdexcept>
#include <string>

namespace ccbm {

// Base of every error the library throws. The CLI maps each subclass to an
// exit code (see tools/ccbm_cli.cpp).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Invalid model/training configuration or CLI usage.
class ConfigError : public Error {
 public:
  using Error::Error;
};

// Operand shapes disagree.
class DimensionError : public Error {
 public:
  using Error::Error;
};

// Malformed or inconsistent input files.
class DataError : public Error {
 public:
  using Error::Error;
};

// Loss became non-finite, embedding degenerated, etc.
class NumericError : public Error {
 public:
  using Error::Error;
};

// A metric is undefined for the given input (e.g. AUC with one class).
class MetricError : public Error {
 public:
  using Error::Error;
};

}  // namespace ccbm
