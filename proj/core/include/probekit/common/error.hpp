#pragma once

#include <stdexcept>
#include <string>

namespace probekit {

/// Base of every error raised by the library. The CLI maps the concrete
/// subclasses onto process exit codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Bad magic, unsupported version, malformed JSON.
class FormatError : public Error {
 public:
  using Error::Error;
};

/// Payload shorter than its header declares.
class CorruptionError : public Error {
 public:
  using Error::Error;
};

/// Precondition or invariant violation on user-supplied data or config.
class ValidationError : public Error {
 public:
  using Error::Error;
};

class IoError : public Error {
 public:
  using Error::Error;
};

/// Non-finite loss or gradient during training.
class NumericError : public Error {
 public:
  using Error::Error;
};

}  // namespace probekit
