#pragma once

#include <stdexcept>
#include <string>

namespace orthofactor {

/// Bad input: dimensions, hyperparameters, configuration values.
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// A computation left its domain (singular system, non-finite value).
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// File system or parse failures on external data.
class IoError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace orthofactor
