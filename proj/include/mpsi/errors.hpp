#pragma once

#include <stdexcept>
#include <string>

namespace mpsi {

/// Base class for every error raised by the engine.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Operand dimensions do not agree.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// A direction or normalization is undefined (zero vector, prompt equal to source, empty mask column).
class DegenerateError : public Error {
public:
    using Error::Error;
};

/// A scalar function returned a non-finite value while being probed.
class EvaluationError : public Error {
public:
    using Error::Error;
};

/// Binary file does not follow the MPSI1 layout.
class FormatError : public Error {
public:
    using Error::Error;
};

/// Header declares more data than the file holds.
class TruncationError : public FormatError {
public:
    using FormatError::FormatError;
};

/// Payload contains a value that violates the data contract (NaN, out of range).
class DataError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

/// Constraint set could not be satisfied within the attempt budget.
class InfeasibleError : public Error {
public:
    using Error::Error;
};

/// Optimization produced a non-finite loss or gradient.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Inconsistent run configuration (e.g. global term requested without a fused direction).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// API called in a state that does not allow it.
class UsageError : public Error {
public:
    using Error::Error;
};

}  // namespace mpsi
