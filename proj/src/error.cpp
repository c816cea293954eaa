#include "opsec/error.hpp"

namespace opsec {

const char* errc_name(Errc e) {
    switch (e) {
    case Errc::PayloadTooLong: return "PayloadTooLong";
    case Errc::PathBudgetExceeded: return "PathBudgetExceeded";
    case Errc::AuthenticationFailure: return "AuthenticationFailure";
    case Errc::ReplayDetected: return "ReplayDetected";
    case Errc::UnknownIdentity: return "UnknownIdentity";
    case Errc::PortSetExhausted: return "PortSetExhausted";
    case Errc::InconsistentState: return "InconsistentState";
    case Errc::UnknownFlow: return "UnknownFlow";
    case Errc::NoWillingBox: return "NoWillingBox";
    case Errc::Aborted: return "Aborted";
    case Errc::TranscriptTampered: return "TranscriptTampered";
    case Errc::SessionNotReady: return "SessionNotReady";
    case Errc::BadDistribution: return "BadDistribution";
    case Errc::ConfigInvalid: return "ConfigInvalid";
    case Errc::NatTableFull: return "NatTableFull";
    case Errc::Infeasible: return "Infeasible";
    case Errc::NoBox: return "NoBox";
    case Errc::IterationLimit: return "IterationLimit";
    case Errc::NonConservative: return "NonConservative";
    case Errc::InvalidArgument: return "InvalidArgument";
    }
    return "Unknown";
}

} // namespace opsec
