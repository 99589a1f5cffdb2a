#pragma once

#include <stdexcept>
#include <string>

namespace qvr {

// One exception type per failure category so callers (and the CLI) can
// report failures distinctly instead of pattern-matching message strings.

// Shape or extent mismatch between tensors.
struct DimensionError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// NaN/Inf where finite values are required, or divergence mid-computation.
struct NumericError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// API misuse: calling an operation in a state its contract forbids.
struct ContractError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Caller-supplied data violates a precondition (empty set, zero-norm token, ...).
struct InputError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A file exists and is readable but its contents are not what we expect.
struct FormatError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// The OS-level read/write itself failed or hit EOF mid-record.
struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Invalid run configuration (bad flag combination, out-of-range value).
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

}  // namespace qvr
