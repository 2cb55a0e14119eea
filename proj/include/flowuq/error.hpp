#pragma once

#include <stdexcept>
#include <string>

namespace flowuq {

/// Base of every exception thrown by the toolkit.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

/// Non-finite values, out-of-range arguments, malformed probability vectors.
struct InvalidInput : Error {
  using Error::Error;
};

struct DimensionMismatch : Error {
  using Error::Error;
};

/// Input file lacks a required column or header.
struct SchemaError : Error {
  using Error::Error;
};

struct EmptyDataset : Error {
  using Error::Error;
};

struct ConfigError : Error {
  using Error::Error;
};

/// A model was asked for something it cannot provide (e.g. BALD scores from a
/// deterministic network).
struct CapabilityError : Error {
  using Error::Error;
};

/// Corrupt or incompatible model/dataset dump.
struct FormatError : Error {
  using Error::Error;
};

}  // namespace flowuq
