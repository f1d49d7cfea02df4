#pragma once

#include <Eigen/Dense>

#include <stdexcept>
#include <string>

namespace evsteer {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

// Base of every error raised by the library. The CLI maps subclasses onto
// exit codes, so keep the hierarchy shallow.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ValidationError : public Error {
public:
    using Error::Error;
};

class DimensionError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

// I/O and transport failures (missing files, unreachable endpoints).
class IoError : public Error {
public:
    using Error::Error;
};

} // namespace evsteer
