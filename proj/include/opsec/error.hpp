#pragma once

#include <stdexcept>
#include <string>

namespace opsec {

enum class Errc {
    PayloadTooLong,
    PathBudgetExceeded,
    AuthenticationFailure,
    ReplayDetected,
    UnknownIdentity,
    PortSetExhausted,
    InconsistentState,
    UnknownFlow,
    NoWillingBox,
    Aborted,
    TranscriptTampered,
    SessionNotReady,
    BadDistribution,
    ConfigInvalid,
    NatTableFull,
    Infeasible,
    NoBox,
    IterationLimit,
    NonConservative,
    InvalidArgument,
};

const char* errc_name(Errc e);

class OpsecError : public std::runtime_error {
public:
    OpsecError(Errc code, const std::string& what)
        : std::runtime_error(std::string(errc_name(code)) + ": " + what), code_(code) {}

    Errc code() const noexcept { return code_; }

private:
    Errc code_;
};

} // namespace opsec
