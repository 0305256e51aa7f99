#pragma once

#include <stdexcept>
#include <string>

namespace dualad {

/// Bad or inconsistent configuration (unknown variant, invalid flag value).
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Input data violates a precondition (shape mismatch, empty class, bad file).
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Non-finite loss, failed factorization that regularization could not rescue.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Process exit codes used by the CLI.
inline constexpr int kExitOk = 0;
inline constexpr int kExitConfigError = 2;
inline constexpr int kExitDataError = 3;
inline constexpr int kExitNumericalError = 4;
inline constexpr int kExitInternalError = 1;

} // namespace dualad
