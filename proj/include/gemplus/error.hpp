#pragma once

#include <stdexcept>
#include <string>

namespace gemplus {

// Failure categories map onto CLI exit codes (2 config, 3 data, 4 budget).
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class DataError : public Error {
 public:
  using Error::Error;
};

class BudgetError : public Error {
 public:
  using Error::Error;
};

// Numerical divergence during generator training or evaluation.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace gemplus
