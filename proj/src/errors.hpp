#pragma once

#include <stdexcept>
#include <string>

namespace dmcodec {

// Base for every error the core raises; the C API maps each subclass to a
// status code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

// Inconsistent or unsupported configuration (sample-rate mismatch, bad layer
// index, zero mixing weights, ...).
class ConfigError : public Error {
public:
    using Error::Error;
};

// Input outside an operation's domain (wrong shape, empty input, NaN latents).
class DomainError : public Error {
public:
    using Error::Error;
};

// Malformed or non-finite data read from disk.
class DataError : public Error {
public:
    using Error::Error;
};

// A training loss went non-finite.
class NumericError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

} // namespace dmcodec
