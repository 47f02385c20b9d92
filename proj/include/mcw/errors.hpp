#pragma once

#include <stdexcept>
#include <string>

namespace mcw {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Bad user-supplied configuration (CLI flags, config files, invalid scenario).
class ConfigError : public Error {
public:
    using Error::Error;
};

/// Filesystem-level failure (cannot open/read/write).
class IoError : public Error {
public:
    using Error::Error;
};

/// Structurally invalid artifact file.
class FormatError : public Error {
public:
    enum class Kind { bad_magic, bad_version, truncated, inconsistent };

    FormatError(Kind kind, const std::string& message) : Error(message), kind_(kind) {}
    Kind kind() const { return kind_; }

private:
    Kind kind_;
};

/// Training produced a non-finite loss.
class DivergenceError : public Error {
public:
    using Error::Error;
};

/// Model and data disagree on shapes or formats.
class IncompatibleError : public Error {
public:
    using Error::Error;
};

} // namespace mcw
