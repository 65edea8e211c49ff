#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace aqse {

enum class ErrorKind {
    InvalidArgument,
    DegenerateSubspace,
    SingularState,
    BadArity,
    SingularOutcome,
    SingularInformation,
    QuadratureFailure,
    TruncationTooCoarse,
    NoConvergence,
    BadSpec,
    BadDistribution,
    TooFewSamples,
    NotReached,
    DegenerateFit,
    Io,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "InvalidArgument";
        case ErrorKind::DegenerateSubspace: return "DegenerateSubspace";
        case ErrorKind::SingularState: return "SingularState";
        case ErrorKind::BadArity: return "BadArity";
        case ErrorKind::SingularOutcome: return "SingularOutcome";
        case ErrorKind::SingularInformation: return "SingularInformation";
        case ErrorKind::QuadratureFailure: return "QuadratureFailure";
        case ErrorKind::TruncationTooCoarse: return "TruncationTooCoarse";
        case ErrorKind::NoConvergence: return "NoConvergence";
        case ErrorKind::BadSpec: return "BadSpec";
        case ErrorKind::BadDistribution: return "BadDistribution";
        case ErrorKind::TooFewSamples: return "TooFewSamples";
        case ErrorKind::NotReached: return "NotReached";
        case ErrorKind::DegenerateFit: return "DegenerateFit";
        case ErrorKind::Io: return "Io";
    }
    return "Unknown";
}

/// Every failure raised by the library carries a kind so callers (and the
/// CLI exit-code mapping) can tell numerical failures from bad input.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

    /// True for failures of the numerics rather than of the caller's input.
    bool numerical() const noexcept {
        return kind_ != ErrorKind::InvalidArgument && kind_ != ErrorKind::BadArity &&
               kind_ != ErrorKind::BadSpec && kind_ != ErrorKind::Io;
    }

private:
    ErrorKind kind_;
};

}  // namespace aqse
