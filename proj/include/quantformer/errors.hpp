#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace quantformer {

// Violated precondition on shapes, sizes or call order.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

class InvalidInputError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class ParseError : public std::runtime_error {
public:
    ParseError(std::size_t line, const std::string& what)
        : std::runtime_error("line " + std::to_string(line) + ": " + what), line_(line) {}

    std::size_t line() const noexcept { return line_; }

private:
    std::size_t line_;
};

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class DegenerateSectionError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class SchemeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class UndefinedMetricError : public std::domain_error {
public:
    using std::domain_error::domain_error;
};

class GapError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

class PrerequisiteError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

} // namespace quantformer
