#pragma once

#include <stdexcept>
#include <string>

namespace exchanger {

// Error taxonomy shared by the library and the CLI exit-code mapping.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid configuration value (bad hyperparameter, malformed config file).
struct ConfigError : Error {
    using Error::Error;
};

// Tensor shape / broadcast mismatch.
struct DimensionError : Error {
    using Error::Error;
};

// API precondition violated (e.g. backward on a non-scalar).
struct ContractError : Error {
    using Error::Error;
};

// Input data is unusable (empty mask, all steps invalid, ...).
struct DataError : Error {
    using Error::Error;
};

// On-disk format violation (bad magic, truncated record, ...).
struct FormatError : Error {
    using Error::Error;
};

// Value outside a covered range (e.g. acquisition day without temperature data).
struct RangeError : Error {
    using Error::Error;
};

// Non-finite values where finite ones are required (diverged training, NaN grad).
struct NumericalError : Error {
    using Error::Error;
};

}  // namespace exchanger
