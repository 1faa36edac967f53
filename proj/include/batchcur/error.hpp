#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace batchcur {

// Base for every error the library throws. The CLI maps the concrete type
// onto a process exit code.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ParameterError : public Error {
public:
    using Error::Error;
};

class GeometryError : public Error {
public:
    using Error::Error;
};

class EmptyInputError : public Error {
public:
    using Error::Error;
};

class ShapeError : public Error {
public:
    using Error::Error;
};

class NumericError : public Error {
public:
    using Error::Error;
};

class InsufficientBatchError : public Error {
public:
    using Error::Error;
};

class ConfigError : public Error {
public:
    using Error::Error;
};

// Invalid command-line flags or flag combinations.
class UsageError : public Error {
public:
    using Error::Error;
};

class IoError : public Error {
public:
    using Error::Error;
};

class SamplingExhaustedError : public Error {
public:
    SamplingExhaustedError(const std::string& what, std::size_t attempts)
        : Error(what + " (gave up after " + std::to_string(attempts) + " attempts)"),
          attempts_(attempts) {}

    std::size_t attempts() const noexcept { return attempts_; }

private:
    std::size_t attempts_;
};

// Names the offending file and record so truncated or corrupt datasets are
// easy to locate.
class FormatError : public Error {
public:
    FormatError(const std::string& file, std::size_t record, const std::string& reason)
        : Error(file + ": record " + std::to_string(record) + ": " + reason),
          file_(file),
          record_(record) {}

    const std::string& file() const noexcept { return file_; }
    std::size_t record() const noexcept { return record_; }

private:
    std::string file_;
    std::size_t record_;
};

}  // namespace batchcur
