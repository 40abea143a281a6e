#pragma once

#include <stdexcept>
#include <string>

namespace fbsvi {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A convex function kind that an operation does not know how to handle.
class UnsupportedFunction : public Error {
public:
    using Error::Error;
};

/// A point lies outside the effective domain required by an operation.
class DomainError : public Error {
public:
    using Error::Error;
};

/// Invalid arguments or missing inputs (wrong dimensions, missing closures).
class InvalidArgument : public Error {
public:
    using Error::Error;
};

/// A coefficient or intermediate value became NaN or infinite.
class NonFiniteValue : public Error {
public:
    using Error::Error;
};

/// Structural constants violate the compatibility conditions.
class CompatibilityError : public Error {
public:
    using Error::Error;
};

/// Explicit part of a time-stepping scheme violates its stability bound.
class CflViolation : public Error {
public:
    CflViolation(const std::string& what, double required_step)
        : Error(what), required_step_(required_step) {}

    double required_step() const noexcept { return required_step_; }

private:
    double required_step_;
};

}  // namespace fbsvi
