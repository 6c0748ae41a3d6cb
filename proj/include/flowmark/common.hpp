#pragma once

#include <stdexcept>
#include <string>

namespace flowmark {

// Library-wide error taxonomy. ContractError marks violated preconditions on
// values (ranges, shapes, capacities); ConfigError marks bad user input
// (CLI flags, config files) and maps to exit code 2 at the CLI boundary.
struct Error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct ContractError : Error {
    using Error::Error;
};

struct ConfigError : Error {
    using Error::Error;
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw ContractError(msg);
}

}  // namespace flowmark
