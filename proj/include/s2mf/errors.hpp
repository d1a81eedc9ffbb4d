#pragma once

#include <stdexcept>
#include <string>

namespace s2mf {

// Error taxonomy used across the library. The CLI maps these to exit codes:
// ConfigError -> 2, FormatError -> 3, NumericError -> 4, everything else -> 1.
struct ContractError : std::logic_error {
    explicit ContractError(const std::string& msg) : std::logic_error(msg) {}
};

struct ShapeError : ContractError {
    explicit ShapeError(const std::string& msg) : ContractError(msg) {}
};

struct LookupError : ContractError {
    explicit LookupError(const std::string& msg) : ContractError(msg) {}
};

struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

struct FormatError : std::runtime_error {
    FormatError(const std::string& msg, size_t byte_offset)
        : std::runtime_error(msg + " (byte offset " + std::to_string(byte_offset) + ")"),
          offset(byte_offset) {}
    size_t offset;
};

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace s2mf
