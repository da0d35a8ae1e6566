#pragma once

#include <stdexcept>
#include <string>

namespace crosspeak {

/// Base error. `exit_code()` is the process status the CLI reports for it.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    [[nodiscard]] virtual int exit_code() const noexcept { return 1; }
};

/// Bad configuration, catalog, flags or input files.
class ConfigError : public Error {
public:
    using Error::Error;
    [[nodiscard]] int exit_code() const noexcept override { return 2; }
};

/// A numerical diagnostic the caller asked to treat as fatal (e.g. lost label tracking).
class NumericalError : public Error {
public:
    using Error::Error;
    [[nodiscard]] int exit_code() const noexcept override { return 3; }
};

/// Well-posed input with no solution in the admissible domain.
class DomainError : public Error {
public:
    using Error::Error;
    [[nodiscard]] int exit_code() const noexcept override { return 4; }
};

}  // namespace crosspeak
