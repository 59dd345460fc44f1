#pragma once

#include <stdexcept>
#include <string>

namespace ilq {

// Shape/dimension contract violations. Message carries both shapes.
struct ShapeError : std::invalid_argument {
    explicit ShapeError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Invalid argument values (non-positive step size, log of non-positive input, ...).
struct DomainError : std::domain_error {
    explicit DomainError(const std::string& msg) : std::domain_error(msg) {}
};

// Bad user-supplied configuration (unknown field, out-of-range hyperparameter).
struct ConfigError : std::invalid_argument {
    explicit ConfigError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Checkpoint file problems, one subclass per failure mode.
struct CheckpointError : std::runtime_error {
    explicit CheckpointError(const std::string& msg) : std::runtime_error(msg) {}
};
struct BadMagicError : CheckpointError {
    explicit BadMagicError(const std::string& msg) : CheckpointError(msg) {}
};
struct VersionError : CheckpointError {
    explicit VersionError(const std::string& msg) : CheckpointError(msg) {}
};
struct TruncatedError : CheckpointError {
    explicit TruncatedError(const std::string& msg) : CheckpointError(msg) {}
};

// Packing a value outside the representable integer range.
struct PackError : std::invalid_argument {
    explicit PackError(const std::string& msg) : std::invalid_argument(msg) {}
};

// Training diverged (non-finite loss or gradient).
struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace ilq
