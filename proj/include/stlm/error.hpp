#pragma once

#include <stdexcept>
#include <string>

namespace stlm {

struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Incompatible tensor shapes or ranks.
struct ShapeError : Error {
    using Error::Error;
};

// Out-of-range index (token id, target class, row index).
struct IndexError : Error {
    using Error::Error;
};

// NaN/Inf detected at an op boundary.
struct NumericError : Error {
    using Error::Error;
};

// Invalid configuration value or unknown config key.
struct ConfigError : Error {
    using Error::Error;
};

// Bad input data (empty corpus, zero-length span, malformed item).
struct DataError : Error {
    using Error::Error;
};

// Malformed or version-mismatched file (merge table, checkpoint).
struct FormatError : Error {
    using Error::Error;
};

} // namespace stlm
