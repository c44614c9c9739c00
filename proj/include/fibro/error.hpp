#pragma once

#include <stdexcept>
#include <string>

namespace fibro {

/// Bad user input: malformed files, invalid configs, contract violations on
/// arguments. The CLI maps these to exit code 1.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Tensor shape or dimension mismatch.
class ShapeError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Malformed on-disk data (CSV rows, containers, checkpoints).
class DataError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

} // namespace fibro
