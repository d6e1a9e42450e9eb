#pragma once

#include <stdexcept>
#include <string>

namespace wmnav {

struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Violated precondition (shape mismatch, empty input, bad argument).
struct ContractError : Error {
  using Error::Error;
};

/// Non-finite value produced by a loss or forward pass.
struct NumericError : Error {
  using Error::Error;
};

/// File does not follow the expected layout (magic, header, manifest).
struct FormatError : Error {
  using Error::Error;
};

/// Payload sizes or checksums disagree with their declared values.
struct IntegrityError : Error {
  using Error::Error;
};

struct ChecksumError : IntegrityError {
  using IntegrityError::IntegrityError;
};

struct MissingFileError : Error {
  using Error::Error;
};

/// Unknown key, wrong type or out-of-range value in a configuration file.
struct ConfigError : Error {
  using Error::Error;
};

struct NoRouteError : Error {
  using Error::Error;
};

#define WMNAV_REQUIRE(cond, msg)                   \
  do {                                             \
    if (!(cond)) throw ::wmnav::ContractError(msg); \
  } while (0)

}  // namespace wmnav
