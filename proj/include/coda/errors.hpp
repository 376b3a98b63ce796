#pragma once

#include <stdexcept>
#include <string>

namespace coda {

// Invalid caller input: bad ranges, mismatched lengths, violated preconditions.
class ArgumentError : public std::invalid_argument {
public:
    explicit ArgumentError(const std::string& what) : std::invalid_argument(what) {}
};

// Input data that cannot be decoded (unsupported WAV encoding, malformed CSV/JSON).
class FormatError : public std::runtime_error {
public:
    explicit FormatError(const std::string& what) : std::runtime_error(what) {}
};

// Numerical failure: singular covariance, non-convergent fit.
class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& what) : std::runtime_error(what) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& what) : std::runtime_error(what) {}
};

}  // namespace coda
