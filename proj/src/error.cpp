#include "lfd/error.hpp"

namespace lfd {

const char* to_string(ErrorKind kind) noexcept {
    switch (kind) {
        case ErrorKind::InvalidValue: return "InvalidValue";
        case ErrorKind::ContractViolation: return "ContractViolation";
        case ErrorKind::InvalidToken: return "InvalidToken";
        case ErrorKind::LengthExceeded: return "LengthExceeded";
        case ErrorKind::MissingCount: return "MissingCount";
        case ErrorKind::EmptyInput: return "EmptyInput";
        case ErrorKind::TooShort: return "TooShort";
        case ErrorKind::Undefined: return "Undefined";
        case ErrorKind::TooFew: return "TooFew";
        case ErrorKind::DivergenceDetected: return "DivergenceDetected";
        case ErrorKind::Unimplemented: return "Unimplemented";
        case ErrorKind::InvalidConfig: return "InvalidConfig";
        case ErrorKind::Io: return "Io";
        case ErrorKind::Parse: return "Parse";
    }
    return "Unknown";
}

}  // namespace lfd
