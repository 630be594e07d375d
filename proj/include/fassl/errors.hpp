#pragma once

#include <stdexcept>
#include <string>

namespace fassl {

// Base class for all library errors.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid dataset/config specification (bad rho, zero classes, ...).
struct SpecError : Error {
    using Error::Error;
};

// Mean placement or sampling could not satisfy its constraints.
struct GenerationError : Error {
    using Error::Error;
};

// Structural problem in a computation graph (shape mismatch, bad node ref).
struct GraphError : Error {
    using Error::Error;
};

// Non-finite value or undefined numeric operation (zero-norm cosine, ...).
struct NumericError : Error {
    using Error::Error;
};

// API used out of order (backward before forward, ...).
struct StateError : Error {
    using Error::Error;
};

// Caller broke a documented precondition.
struct ContractError : Error {
    using Error::Error;
};

// On-disk artifact is malformed or truncated.
struct FormatError : Error {
    using Error::Error;
};

// Training loss blew up past the divergence threshold.
struct DivergenceError : Error {
    using Error::Error;
};

}  // namespace fassl
