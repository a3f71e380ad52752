#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace sdre {

enum class ErrorCode {
    NotStabilizable,
    SingularSubspace,
    BadWeights,
    NotHurwitz,
    NonFiniteDerivative,
    AlphaOutOfRange,
    ObservabilityLoss,
    CareFailure,
    NonFiniteState,
    BadCovariance,
    ShapeMismatch,
    Diverged,
    ParseError,
    ValidationError,
    IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
    switch (code) {
    case ErrorCode::NotStabilizable: return "NotStabilizable";
    case ErrorCode::SingularSubspace: return "SingularSubspace";
    case ErrorCode::BadWeights: return "BadWeights";
    case ErrorCode::NotHurwitz: return "NotHurwitz";
    case ErrorCode::NonFiniteDerivative: return "NonFiniteDerivative";
    case ErrorCode::AlphaOutOfRange: return "AlphaOutOfRange";
    case ErrorCode::ObservabilityLoss: return "ObservabilityLoss";
    case ErrorCode::CareFailure: return "CareFailure";
    case ErrorCode::NonFiniteState: return "NonFiniteState";
    case ErrorCode::BadCovariance: return "BadCovariance";
    case ErrorCode::ShapeMismatch: return "ShapeMismatch";
    case ErrorCode::Diverged: return "Diverged";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::ValidationError: return "ValidationError";
    case ErrorCode::IoError: return "IoError";
    }
    return "Unknown";
}

/// Every failure raised by the library carries one of the codes above so
/// callers (and the CLI exit-code mapping) can dispatch without parsing text.
class Error : public std::runtime_error {
public:
    Error(ErrorCode code, const std::string& what)
        : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

    [[nodiscard]] ErrorCode code() const noexcept { return code_; }

private:
    ErrorCode code_;
};

} // namespace sdre
