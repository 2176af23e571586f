#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hhc {

enum class ErrorKind {
    NoConvergence,
    NoSignChange,
    NonFinite,
    NotPeriodic,
    SingularJacobian,
    NoOscillation,
    MeshTooCoarse,
    DegenerateCycle,
    TrackingLost,
    NoExtremum,
    StartInvalid,
    ParseError,
};

constexpr std::string_view to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::NoConvergence: return "NoConvergence";
        case ErrorKind::NoSignChange: return "NoSignChange";
        case ErrorKind::NonFinite: return "NonFinite";
        case ErrorKind::NotPeriodic: return "NotPeriodic";
        case ErrorKind::SingularJacobian: return "SingularJacobian";
        case ErrorKind::NoOscillation: return "NoOscillation";
        case ErrorKind::MeshTooCoarse: return "MeshTooCoarse";
        case ErrorKind::DegenerateCycle: return "DegenerateCycle";
        case ErrorKind::TrackingLost: return "TrackingLost";
        case ErrorKind::NoExtremum: return "NoExtremum";
        case ErrorKind::StartInvalid: return "StartInvalid";
        case ErrorKind::ParseError: return "ParseError";
    }
    return "Unknown";
}

/// Numerical failure raised by every solver in the library. The kind is
/// what callers branch on; the message is for humans.
class Error : public std::runtime_error {
public:
    Error(ErrorKind kind, const std::string& what)
        : std::runtime_error(std::string(to_string(kind)) + ": " + what), kind_(kind) {}

    ErrorKind kind() const noexcept { return kind_; }

private:
    ErrorKind kind_;
};

}  // namespace hhc
