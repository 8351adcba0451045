#pragma once

#include <stdexcept>
#include <string>

namespace selfmon {

// Operand shapes do not fit the operation.
struct DimensionError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// A caller broke a precondition (non-scalar backward root, empty attention set, ...).
struct ContractError : std::logic_error {
  using std::logic_error::logic_error;
};

// Invalid configuration value (learning rate, odd encoding width, ...).
struct ConfigError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

// Anything wrong with generated or loaded data.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct GenerationError : DataError {
  using DataError::DataError;
};

struct SamplingError : DataError {
  using DataError::DataError;
};

struct DistanceError : DataError {
  using DataError::DataError;
};

struct EncodingError : DataError {
  using DataError::DataError;
};

struct ParseError : DataError {
  using DataError::DataError;
};

struct VersionError : DataError {
  using DataError::DataError;
};

// NaN/Inf showed up where it must not.
struct NumericError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

}  // namespace selfmon
