#pragma once

#include <stdexcept>
#include <string>

namespace ssflab {

/// Base class for every error raised by the library. The CLI maps the
/// concrete subclasses onto process exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

/// Malformed input: bad configuration, violated preconditions.
class ValidationError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

/// A hypothesis (simplicity, non-criticality, non-trapping, decay) does not hold.
class CertificationError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

/// A numerical guard tripped: solver failure, unresolved truncation, ill-conditioning.
class NumericalGuardError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

}  // namespace ssflab
