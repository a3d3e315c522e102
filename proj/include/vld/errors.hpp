#pragma once

#include <stdexcept>
#include <string>

namespace vld {

// Error taxonomy, mirrored by the CLI exit codes:
//   ConfigError -> 2, DataError -> 3, DivergenceError -> 4.
// ContractError marks a violated API precondition (bad shapes, degenerate
// inputs) and maps to exit code 2 when it escapes to the CLI.

struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

struct ConfigError : Error {
    explicit ConfigError(const std::string& msg) : Error("config error: " + msg) {}
};

struct DataError : Error {
    explicit DataError(const std::string& msg) : Error("data error: " + msg) {}
};

struct ContractError : Error {
    explicit ContractError(const std::string& msg) : Error("contract violation: " + msg) {}
};

struct DivergenceError : Error {
    explicit DivergenceError(const std::string& msg) : Error("numeric divergence: " + msg) {}
};

} // namespace vld
