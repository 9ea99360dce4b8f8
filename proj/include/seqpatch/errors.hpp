#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>

namespace seqpatch {

/// Tensor or array shapes that do not fit an operation.
class ShapeError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

/// Non-finite values reached an optimizer or loss.
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Malformed or inconsistent input files. Carries the byte offset when known.
class DataError : public std::runtime_error {
public:
    explicit DataError(const std::string& what, std::optional<std::uint64_t> offset = std::nullopt)
        : std::runtime_error(offset ? what + " (at byte " + std::to_string(*offset) + ")" : what), offset_(offset)
    {
    }
    std::optional<std::uint64_t> offset() const noexcept { return offset_; }

private:
    std::optional<std::uint64_t> offset_;
};

} // namespace seqpatch
