#pragma once

#include <stdexcept>
#include <string>

namespace cardiacnet {

// Every failure in the library surfaces as one of these. The CLI maps them
// onto exit codes; nothing else is used as a failure channel.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class FormatError : public Error {  // bad magic, bad header text
 public:
  using Error::Error;
};

class LengthError : public Error {  // truncated or inconsistent payloads
 public:
  using Error::Error;
};

class ValidationError : public Error {  // values violating a type invariant
 public:
  using Error::Error;
};

class ShapeError : public Error {
 public:
  using Error::Error;
};

class ParameterError : public Error {
 public:
  using Error::Error;
};

class StateError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class UndefinedMetricError : public Error {
 public:
  using Error::Error;
};

class PairingError : public Error {  // image without label or vice versa
 public:
  using Error::Error;
};

class DivergenceError : public Error {  // non-finite data or loss
 public:
  using Error::Error;
};

}  // namespace cardiacnet
