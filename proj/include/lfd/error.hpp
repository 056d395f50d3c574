#pragma once

#include <stdexcept>
#include <string>

namespace lfd {

enum class ErrorKind {
    InvalidValue,
    ContractViolation,
    InvalidToken,
    LengthExceeded,
    MissingCount,
    EmptyInput,
    TooShort,
    Undefined,
    TooFew,
    DivergenceDetected,
    Unimplemented,
    InvalidConfig,
    Io,
    Parse,
};

const char* to_string(ErrorKind kind) noexcept;

// Every failure raised by the library carries a kind so callers (and the CLI
// exit-code mapping) can branch without parsing messages.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& message)
        : std::runtime_error(std::string(to_string(kind)) + ": " + message), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

inline void require(bool condition, ErrorKind kind, const std::string& message) {
    if (!condition) {
        throw Error(kind, message);
    }
}

}  // namespace lfd
