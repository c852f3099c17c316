#pragma once

#include <stdexcept>
#include <string>

namespace swcl {

/// Invalid inputs, contract violations, missing upstream artifacts.
/// Mapped to exit code 2 by the CLI.
class ValidationError : public std::runtime_error {
public:
    explicit ValidationError(const std::string& msg) : std::runtime_error(msg) {}
};

/// Non-finite values or failed numerical checks. Mapped to exit code 3.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace swcl
