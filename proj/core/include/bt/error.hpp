#pragma once

#include <stdexcept>
#include <string>

namespace bt {

/// Thrown when an argument violates an operation's precondition
/// (empty tensor, non-finite entry, shape mismatch, negative scale...).
class InvalidInput : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Thrown by loaders and deserializers on magic mismatch, truncation or
/// out-of-range content.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Thrown when a training run produces a non-finite loss.
class DivergenceError : public std::runtime_error {
public:
    DivergenceError(const std::string& what, std::string snapshot)
        : std::runtime_error(what), snapshot_(std::move(snapshot)) {}

    /// JSON text describing the state at the point of divergence.
    const std::string& snapshot() const noexcept { return snapshot_; }

private:
    std::string snapshot_;
};

}  // namespace bt
