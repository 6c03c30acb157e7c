#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace duet {

class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Unified diff text that violates header or line-count rules. `line()` is 1-based.
class MalformedDiff : public Error {
public:
    MalformedDiff(std::size_t line, const std::string& what)
        : Error("malformed diff at line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

/// A structured input document (change set, config) does not match its schema.
/// `path()` is a JSON-pointer-like location such as `changes[2].ideal_span`.
class SchemaError : public Error {
public:
    SchemaError(std::string path, const std::string& what)
        : Error(path + ": " + what), path_(std::move(path)) {}

    const std::string& path() const noexcept { return path_; }

private:
    std::string path_;
};

/// A marker plan document failed validation.
class SchemaViolation : public Error {
public:
    SchemaViolation(std::string path, std::string reason)
        : Error(path.empty() ? reason : path + ": " + reason),
          path_(std::move(path)),
          reason_(std::move(reason)) {}

    const std::string& path() const noexcept { return path_; }
    const std::string& reason() const noexcept { return reason_; }

private:
    std::string path_;
    std::string reason_;
};

class BackendError : public Error {
public:
    using Error::Error;
};

class RangeOutOfBounds : public Error {
public:
    using Error::Error;
};

class SentinelCorrupted : public Error {
public:
    SentinelCorrupted(std::string file, std::size_t line, const std::string& what)
        : Error(file + ":" + std::to_string(line) + ": " + what), file_(std::move(file)), line_(line) {}

    const std::string& file() const noexcept { return file_; }
    std::size_t line() const noexcept { return line_; }

private:
    std::string file_;
    std::size_t line_;
};

class IoError : public Error {
public:
    using Error::Error;
};

class ToolMissing : public Error {
public:
    using Error::Error;
};

class InvalidRecord : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

class HealthCheckTimeout : public Error {
public:
    explicit HealthCheckTimeout(char version, const std::string& detail = {})
        : Error(std::string("health check timed out for version ") + version + (detail.empty() ? "" : ": " + detail)),
          version_(version) {}

    char version() const noexcept { return version_; }

private:
    char version_;
};

class ZeroBaseline : public Error {
public:
    using Error::Error;
};

class InsufficientData : public Error {
public:
    using Error::Error;
};

} // namespace duet
