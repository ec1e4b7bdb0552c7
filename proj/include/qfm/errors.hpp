#pragma once

#include <stdexcept>
#include <string>

namespace qfm {

// Error taxonomy: every throw site uses one of these so callers (and the CLI
// exit-code mapping) can tell configuration mistakes from runtime failures.

struct error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Qubit count outside the supported range.
struct capacity_error : error {
    using error::error;
};

// Qubit or parameter index out of range, duplicate wire, etc.
struct index_error : error {
    using error::error;
};

// Invalid or inconsistent configuration (unknown kinds, bad field values).
struct config_error : error {
    using error::error;
};

// Malformed runtime inputs: dimension mismatches, non-uniform grids.
struct input_error : error {
    using error::error;
};

// Numerical failure, e.g. a singular shift-rule system.
struct numerical_error : error {
    using error::error;
};

// Metric undefined for the given data (zero reference median).
struct metric_error : error {
    using error::error;
};

// File I/O and parse failures for run artifacts and field data.
struct io_error : error {
    using error::error;
};

} // namespace qfm
