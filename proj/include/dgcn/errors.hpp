#pragma once

#include <stdexcept>
#include <string>

namespace dgcn {

// Exit-code protocol used by the CLI: 0 success, 2 config error,
// 3 numeric divergence, 4 I/O error.
class DimensionError : public std::invalid_argument {
public:
    explicit DimensionError(const std::string& msg) : std::invalid_argument(msg) {}
};

class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

class NumericError : public std::runtime_error {
public:
    explicit NumericError(const std::string& msg) : std::runtime_error(msg) {}
};

class IoError : public std::runtime_error {
public:
    explicit IoError(const std::string& msg) : std::runtime_error(msg) {}
};

class ParseError : public IoError {
public:
    ParseError(const std::string& file, std::size_t line, const std::string& msg)
        : IoError(file + ":" + std::to_string(line) + ": " + msg), line_(line) {}
    std::size_t line() const { return line_; }

private:
    std::size_t line_;
};

}  // namespace dgcn
