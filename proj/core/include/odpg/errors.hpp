#pragma once

#include <stdexcept>
#include <string>

namespace odpg {

// Exit-code mapping used by the CLI: usage 2, validation 3, io 4, numerical 5.

struct UsageError : std::runtime_error {
    explicit UsageError(const std::string& msg) : std::runtime_error(msg) {}
};

// Bad runtime inputs: out-of-range values, malformed data, empty splits.
struct ValidationError : std::runtime_error {
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

// Tensor/layer shape disagreements.
struct DimensionError : ValidationError {
    explicit DimensionError(const std::string& msg) : ValidationError(msg) {}
};

// Invalid configuration: bad key, bad value, indivisible channel counts.
struct ConfigError : ValidationError {
    explicit ConfigError(const std::string& msg) : ValidationError(msg) {}
};

struct IoError : std::runtime_error {
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

// Checksum/magic mismatches in persisted artifacts.
struct IntegrityError : IoError {
    explicit IntegrityError(const std::string& msg) : IoError(msg) {}
};

struct NumericalError : std::runtime_error {
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace odpg
