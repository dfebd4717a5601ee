#pragma once

#include <stdexcept>
#include <string>

namespace rskt {

// Error taxonomy. The CLI maps ConfigError/IoError to exit code 2 and
// NumericError (plus anything unexpected) to exit code 3.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Bad configuration, bad user input, unknown keys, invalid labels.
struct ConfigError : Error {
    using Error::Error;
};

// Shape/contract violations between tensors and operations.
struct ShapeError : Error {
    using Error::Error;
};

// Non-finite values, degenerate inputs (zero-norm vectors), diverging runs.
struct NumericError : Error {
    using Error::Error;
};

// Missing files, malformed containers.
struct IoError : Error {
    using Error::Error;
};

} // namespace rskt
