#pragma once

#include <stdexcept>
#include <string>

namespace cmp {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid configuration or parameter values (non-finite entries, bad shapes,
// unknown config keys, out-of-range hyperparameters).
struct ConfigError : Error {
    using Error::Error;
};

// Shape/dimension mismatch between tensors or weight matrices.
struct ShapeError : ConfigError {
    using ConfigError::ConfigError;
};

// Dense-table lookup outside the coverage lattice.
struct OutOfCoverageError : Error {
    using Error::Error;
};

// Serialization problems. Subclasses distinguish the failure site so callers
// can report precise diagnostics.
struct FormatError : Error {
    using Error::Error;
};

struct BadMagicError : FormatError {
    using FormatError::FormatError;
};

struct VersionError : FormatError {
    using FormatError::FormatError;
};

struct TruncatedError : FormatError {
    using FormatError::FormatError;
};

// Training failure (divergence); message carries the step index.
struct TrainingError : Error {
    using Error::Error;
};

}  // namespace cmp
