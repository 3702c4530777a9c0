#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace tssm {

// Runtime failure inside the engine: bad data, numeric blow-up, broken files.
struct Error : std::runtime_error {
    explicit Error(const std::string& msg) : std::runtime_error(msg) {}
};

// Invalid user-supplied configuration or arguments. The CLI maps this to
// exit code 1; every other exception maps to exit code 2.
struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

using Shape = std::vector<int>;

std::int64_t shape_numel(const Shape& shape);
std::string shape_str(const Shape& shape);

}  // namespace tssm
