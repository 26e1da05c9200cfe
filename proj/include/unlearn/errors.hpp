#pragma once

#include <stdexcept>
#include <string>

namespace unlearn {

// Violation of a documented operation contract (shape mismatch, out-of-range
// argument, non-scalar backward root, ...).
struct ContractViolation : std::logic_error {
    explicit ContractViolation(const std::string& msg) : std::logic_error(msg) {}
};

// Invalid run configuration (bad ranges, missing prerequisites).
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// Malformed external file (IDX payloads, checkpoints, config text).
struct FormatError : std::runtime_error {
    explicit FormatError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace unlearn
