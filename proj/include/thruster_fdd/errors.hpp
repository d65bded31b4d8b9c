#pragma once

#include <stdexcept>
#include <string>

namespace tfdd {

/// Base of every error raised by the library. The CLI maps these to exit code 1.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A value lies outside the domain an operation accepts (e.g. |u| > 1).
class InputDomainError : public Error {
public:
    using Error::Error;
};

/// Invalid parameters or configuration.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Missing, empty or malformed data.
class DataError : public Error {
public:
    using Error::Error;
};

/// Dimension mismatch between tensors.
class ShapeError : public Error {
public:
    using Error::Error;
};

/// Non-finite values in losses or gradients.
class NumericError : public Error {
public:
    using Error::Error;
};

class TrainingError : public Error {
public:
    using Error::Error;
};

/// Free-running prediction left the bounded region.
class InstabilityError : public Error {
public:
    using Error::Error;
};

/// r2 of a constant target.
class UndefinedScoreError : public Error {
public:
    using Error::Error;
};

} // namespace tfdd
