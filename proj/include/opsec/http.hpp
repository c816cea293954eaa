#pragma once

#include <optional>
#include <string>
#include <string_view>

#include "opsec/bytes.hpp"
#include "opsec/origin.hpp"

namespace opsec::http {

Bytes request_bytes(const std::string& path, const std::string& host);
std::optional<std::string> request_path(ByteView payload);

Bytes response_bytes(const origin::HttpResponse& r);
std::optional<origin::HttpResponse> parse_response(ByteView payload);
bool is_response(ByteView payload);

// Locates the base64url run that follows "/.opsec/" in text.
struct EnvelopeSpan {
    size_t begin = 0;
    size_t end = 0;
};
std::optional<EnvelopeSpan> find_envelope(std::string_view text);

// Replaces the embedded run (first occurrence) with the encoding of new_path's run.
std::string replace_envelope(std::string_view text, std::string_view new_path);

} // namespace opsec::http
