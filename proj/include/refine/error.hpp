#pragma once

#include <stdexcept>
#include <string>

namespace refine {

/// Base class of every error raised by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad user input: malformed CSV, schema violations, invalid parameters.
class InputError : public Error {
public:
    using Error::Error;
};

/// Invalid or incomplete configuration (including missing credentials).
class ConfigError : public InputError {
public:
    using InputError::InputError;
};

/// Network or HTTP failure talking to a completion endpoint.
class TransportError : public Error {
public:
    using Error::Error;
};

/// Malformed CSV at a specific data row (1-based, header excluded).
class CsvError : public InputError {
public:
    CsvError(std::size_t row, const std::string& what)
        : InputError("row " + std::to_string(row) + ": " + what), row_(row) {}

    std::size_t row() const noexcept { return row_; }

private:
    std::size_t row_;
};

}  // namespace refine
