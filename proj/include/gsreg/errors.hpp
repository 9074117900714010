#pragma once

#include <stdexcept>
#include <string>

namespace gsreg {

// Bad configuration or invalid user-supplied dimensions. CLI exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& what) : std::runtime_error(what) {}
};

// File/serialization failures. CLI exit code 3.
struct IoError : std::runtime_error {
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

// Shape contract violations between in-memory objects. CLI exit code 2.
struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& what) : std::runtime_error(what) {}
};

// Non-finite values where finiteness is an invariant. CLI exit code 4.
struct NumericError : std::runtime_error {
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace gsreg
