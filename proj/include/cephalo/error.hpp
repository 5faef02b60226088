#pragma once

#include <stdexcept>
#include <string>

namespace cephalo {

// Bad user input: malformed config, mismatched shapes, out-of-range
// coordinates. CLI maps these to exit code 1.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& what) : std::runtime_error(what) {}
};

class ShapeError : public ValidationError {
public:
    explicit ShapeError(const std::string& what) : ValidationError(what) {}
};

class ConfigError : public ValidationError {
public:
    explicit ConfigError(const std::string& what) : ValidationError(what) {}
};

// Failures of execution rather than of input: I/O, numerical divergence.
// CLI maps these to exit code 2.
class RuntimeError : public std::runtime_error {
public:
    explicit RuntimeError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public RuntimeError {
public:
    explicit IoError(const std::string& what) : RuntimeError(what) {}
};

class NumericError : public RuntimeError {
public:
    explicit NumericError(const std::string& what) : RuntimeError(what) {}
};

}  // namespace cephalo
