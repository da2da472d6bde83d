#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace prop {

// Error taxonomy. Callers (CLI, tests) branch on the concrete type, so each
// failure mode gets its own exception class instead of a bare runtime_error.

// Incompatible tensor/layer shapes.
struct DimensionError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Caller violated an API precondition (empty dataset, runs == 0, ...).
struct UsageError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Invalid detector/noise configuration.
struct ConfigError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Class index out of range.
struct IndexError : std::out_of_range {
    using std::out_of_range::out_of_range;
};

// Trigger patch does not fit inside the image.
struct PlacementError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Layer stack cannot be assembled (dims collapse, X out of range, ...).
struct ArchitectureError : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

// Training diverged or could not proceed.
struct TrainingError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// A forward pass produced non-finite values.
struct NumericOverflowError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// Malformed file. Carries the byte offset where parsing failed.
struct FormatError : std::runtime_error {
    FormatError(const std::string& msg, std::uint64_t offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(offset) + ")"),
          byte_offset(offset) {}
    explicit FormatError(const std::string& msg) : std::runtime_error(msg), byte_offset(0) {}

    std::uint64_t byte_offset;
};

}  // namespace prop
