#pragma once

#include <cstddef>
#include <optional>
#include <stdexcept>
#include <string>

namespace esm {

/// Root of every exception thrown by the library.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// A function was called with arguments outside its contract.
class ArgumentError : public Error {
public:
    using Error::Error;
};

/// Invalid configuration: bad timeframe chain, flow proxy without flow columns, unknown keys.
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Bad input data. Carries the 1-based data row when the problem is row-specific.
class DataError : public Error {
public:
    explicit DataError(const std::string& what, std::optional<std::size_t> row = std::nullopt)
        : Error(row ? "row " + std::to_string(*row) + ": " + what : what), row_(row) {}

    std::optional<std::size_t> row() const noexcept { return row_; }

private:
    std::optional<std::size_t> row_;
};

/// Zero total flow in a window: NED is undefined there.
class UndefinedFlowError : public Error {
public:
    using Error::Error;
};

/// A consistency check inside an algorithm failed (e.g. a non-monotone root function).
class InternalError : public Error {
public:
    using Error::Error;
};

}  // namespace esm
