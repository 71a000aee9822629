#pragma once

#include <stdexcept>
#include <string>

namespace gaitprint {

// Error families map onto CLI exit codes: config 1, data 2, numeric 3.
enum class ErrorKind { config = 1, data = 2, numeric = 3 };

class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& what) : Error(ErrorKind::config, what) {}
};

struct DataError : Error {
    explicit DataError(const std::string& what) : Error(ErrorKind::data, what) {}
};

struct NumericError : Error {
    explicit NumericError(const std::string& what) : Error(ErrorKind::numeric, what) {}
};

struct ParseError : DataError {
    ParseError(std::size_t line, const std::string& what)
        : DataError("line " + std::to_string(line) + ": " + what), line(line) {}
    std::size_t line;
};

struct OrderingError : DataError {
    using DataError::DataError;
};

struct EmptyInputError : DataError {
    using DataError::DataError;
};

struct ShapeError : DataError {
    using DataError::DataError;
};

struct DuplicationError : DataError {
    using DataError::DataError;
};

struct EligibilityError : DataError {
    using DataError::DataError;
};

struct CompletenessError : DataError {
    using DataError::DataError;
};

struct DegenerateLabelError : DataError {
    using DataError::DataError;
};

struct FoldConstructionError : DataError {
    using DataError::DataError;
};

}  // namespace gaitprint
