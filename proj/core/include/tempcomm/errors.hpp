#pragma once

#include <stdexcept>
#include <string>

namespace tempcomm {

// Exit-code mapping used by the CLI: ConfigError -> 1, DataError -> 2,
// CheckError -> 3. Anything else is a plain bug.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

struct DataError : std::runtime_error {
    explicit DataError(const std::string& msg) : std::runtime_error(msg) {}
};

struct CheckError : std::runtime_error {
    explicit CheckError(const std::string& msg) : std::runtime_error(msg) {}
};

struct ShapeError : std::runtime_error {
    explicit ShapeError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace tempcomm
