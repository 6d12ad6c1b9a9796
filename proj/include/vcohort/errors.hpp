#pragma once

#include <stdexcept>
#include <string>

namespace vcohort {

// Error categories map one-to-one onto CLI exit codes.
class Error : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
    virtual int exit_code() const noexcept { return 1; }
};

class ConfigError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 2; }
};

class DataError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 3; }
};

class NumericalError : public Error {
public:
    using Error::Error;
    int exit_code() const noexcept override { return 4; }
};

// Caller broke a documented precondition (dimension mismatch and the like).
class ContractError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

}  // namespace vcohort
