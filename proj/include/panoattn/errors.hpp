#pragma once

#include <stdexcept>
#include <string>

namespace panoattn {

/// Invalid rig/layout/run configuration. Messages name the offending level and axis.
class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Shape mismatch, out-of-range shift, bad k, and similar caller errors.
class ArgumentError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values where finite ones are required.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed archive, detection file, or config file.
class FormatError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace panoattn
