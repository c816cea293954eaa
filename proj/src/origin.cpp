#include "opsec/origin.hpp"

#include <cmath>

#include "opsec/error.hpp"

namespace opsec::origin {

const char* mode_name(ReflectionMode m) {
    switch (m) {
    case ReflectionMode::RedirectReflect: return "RedirectReflect";
    case ReflectionMode::ErrorReflect: return "ErrorReflect";
    case ReflectionMode::NoReflect: return "NoReflect";
    }
    return "?";
}

HttpResponse handle_get(const ServerProfile& profile, const std::string& path, uint32_t ts_val) {
    HttpResponse r;
    r.ts_ecr = ts_val;
    r.close = profile.close_after_response;
    if (auto it = profile.content.find(path); it != profile.content.end()) {
        r.status = 200;
        r.body = it->second;
        return r;
    }
    switch (profile.reflection_mode) {
    case ReflectionMode::RedirectReflect:
        r.status = 301;
        r.headers["Location"] = "https://" + profile.host + path;
        break;
    case ReflectionMode::ErrorReflect:
        r.status = 404;
        r.body = "<html><body>Not Found: " + path + "</body></html>";
        break;
    case ReflectionMode::NoReflect:
        r.status = 404;
        r.body = "<html><body>Not Found</body></html>";
        break;
    }
    return r;
}

std::string reflected_text(const HttpResponse& resp) {
    std::string out;
    if (auto it = resp.headers.find("Location"); it != resp.headers.end()) out = it->second;
    out += "\n";
    out += resp.body;
    return out;
}

ReflectionMix ReflectionMix::defaults() {
    const double r = 0.634, e = 0.294, n = 0.0634;
    const double sum = r + e + n;
    return {{{ReflectionMode::RedirectReflect, r / sum},
             {ReflectionMode::ErrorReflect, e / sum},
             {ReflectionMode::NoReflect, n / sum}}};
}

void ReflectionMix::validate() const {
    double sum = 0;
    for (auto& [m, w] : weights) {
        if (!(w >= 0)) throw OpsecError(Errc::BadDistribution, "negative weight");
        sum += w;
    }
    if (weights.empty() || std::fabs(sum - 1.0) > 1e-9)
        throw OpsecError(Errc::BadDistribution, "weights sum to " + std::to_string(sum));
}

ServerProfile sample_profile(const ReflectionMix& mix, Rng& rng, const ServerProfile& base) {
    mix.validate();
    double u = rng.uniform();
    ServerProfile p = base;
    p.reflection_mode = mix.weights.back().first;
    double acc = 0;
    for (auto& [m, w] : mix.weights) {
        acc += w;
        if (u < acc) {
            p.reflection_mode = m;
            break;
        }
    }
    return p;
}

} // namespace opsec::origin
