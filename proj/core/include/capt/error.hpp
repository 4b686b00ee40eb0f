#pragma once

#include <stdexcept>
#include <string>

namespace capt {

class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class DimensionError : public Error {
 public:
  using Error::Error;
};

class IndexError : public Error {
 public:
  using Error::Error;
};

// Violated call contract (non-scalar loss, second backward, non-unit rows...).
class ContractError : public Error {
 public:
  using Error::Error;
};

class DegenerateRowError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class EmptyCorpusError : public Error {
 public:
  using Error::Error;
};

class CorruptionError : public Error {
 public:
  using Error::Error;
};

class ScheduleError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

// Non-finite loss or gradient during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace capt
