#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "opsec/rng.hpp"

namespace opsec::origin {

enum class ReflectionMode { RedirectReflect, ErrorReflect, NoReflect };

const char* mode_name(ReflectionMode m);

struct ServerProfile {
    ReflectionMode reflection_mode = ReflectionMode::RedirectReflect;
    bool close_after_response = false;
    uint16_t listen_port = 443;
    std::map<std::string, std::string> content;
    bool tls_like = false;
    std::string host = "origin.example";
};

struct HttpResponse {
    int status = 0;
    std::map<std::string, std::string> headers;
    std::string body;
    uint32_t ts_ecr = 0;
    bool close = false;
};

HttpResponse handle_get(const ServerProfile& profile, const std::string& path, uint32_t ts_val);

// Text a client scans for reflected content: Location value and body.
std::string reflected_text(const HttpResponse& resp);

struct ReflectionMix {
    std::vector<std::pair<ReflectionMode, double>> weights;

    static ReflectionMix defaults();  // measured shares, renormalized
    void validate() const;           // throws BadDistribution
};

ServerProfile sample_profile(const ReflectionMix& mix, Rng& rng, const ServerProfile& base = {});

} // namespace opsec::origin
