#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>

namespace fedtgp {

// Shapes or lengths that do not line up.
class DimensionError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Input values outside an operation's domain (bad label, empty split, ...).
class ValidationError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// A caller broke an operation's precondition on internal state.
class ContractError : public std::logic_error {
public:
    using std::logic_error::logic_error;
};

// Invalid run configuration. The message names the field and the constraint.
class ConfigError : public std::invalid_argument {
public:
    using std::invalid_argument::invalid_argument;
};

// Malformed binary input. Carries the byte offset where parsing failed.
class FormatError : public std::runtime_error {
public:
    FormatError(const std::string& what, std::uint64_t offset)
        : std::runtime_error(what + " (at byte offset " + std::to_string(offset) + ")"),
          offset_(offset) {}

    std::uint64_t offset() const noexcept { return offset_; }

private:
    std::uint64_t offset_;
};

// Training diverged (non-finite loss).
class NumericError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace fedtgp
