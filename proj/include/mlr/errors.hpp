#pragma once

#include <stdexcept>
#include <string>

namespace mlr {

/// Base of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed input or violated model invariant. CLI exit code 2.
class ValidationError : public Error {
public:
    using Error::Error;
};

/// Malformed file contents (JSON syntax, missing keys).
class ParseError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

/// Numerical breakdown. CLI exit code 3.
class NumericalError : public Error {
public:
    using Error::Error;
};

/// Fewer support nodes than polynomial basis terms, even after growing the radius.
class SupportDeficiencyError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Polynomial moment matrix P^T R^-1 P is singular (e.g. collinear support nodes).
class RankDeficiencyError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// Correlation matrix could not be factorized reliably.
class ConditioningError : public NumericalError {
public:
    ConditioningError(const std::string& what, double rcond)
        : NumericalError(what), rcond_(rcond) {}
    double rcond() const noexcept { return rcond_; }

private:
    double rcond_;
};

/// Stiffness matrix is not positive definite: the model admits a rigid-body motion.
class RigidBodyError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// A modification leaves the structure singular (disconnected or unconstrained).
class StructuralError : public NumericalError {
public:
    using NumericalError::NumericalError;
};

/// File system failure. CLI exit code 4.
class IoError : public Error {
public:
    using Error::Error;
};

}  // namespace mlr
