#pragma once

#include <cstddef>
#include <stdexcept>
#include <string>

namespace flowsdf {

// Bad key, bad value, or malformed configuration input. CLI exit code 2.
class ConfigError : public std::runtime_error {
public:
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

// File-level failure. `offset` is the byte position at which the problem was
// detected (0 when it does not apply). CLI exit code 3.
class IoError : public std::runtime_error {
public:
    IoError(const std::string& msg, std::size_t offset = 0)
        : std::runtime_error(msg), offset_(offset) {}
    std::size_t offset() const { return offset_; }

private:
    std::size_t offset_ = 0;
};

// Non-finite state encountered during training or sampling. CLI exit code 4.
class NumericalError : public std::runtime_error {
public:
    explicit NumericalError(const std::string& msg) : std::runtime_error(msg) {}
};

}  // namespace flowsdf
