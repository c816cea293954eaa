#include "opsec/http.hpp"

#include <sstream>

#include "opsec/wire.hpp"

namespace opsec::http {

namespace {

const std::string MARKER = "/" + std::string(wire::OPSEC_PATH_PREFIX) + "/";

bool is_b64url(char c) {
    return (c >= 'A' && c <= 'Z') || (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '-' ||
           c == '_';
}

std::string_view as_text(ByteView v) {
    return std::string_view(reinterpret_cast<const char*>(v.data()), v.size());
}

} // namespace

Bytes request_bytes(const std::string& path, const std::string& host) {
    return to_bytes("GET " + path + " HTTP/1.1\r\nHost: " + host + "\r\n\r\n");
}

std::optional<std::string> request_path(ByteView payload) {
    auto t = as_text(payload);
    if (t.rfind("GET ", 0) != 0) return std::nullopt;
    size_t sp = t.find(' ', 4);
    if (sp == std::string_view::npos) return std::nullopt;
    return std::string(t.substr(4, sp - 4));
}

Bytes response_bytes(const origin::HttpResponse& r) {
    std::string s = "HTTP/1.1 " + std::to_string(r.status) + "\r\n";
    for (auto& [k, v] : r.headers) s += k + ": " + v + "\r\n";
    if (r.close) s += "Connection: close\r\n";
    s += "Content-Length: " + std::to_string(r.body.size()) + "\r\n\r\n" + r.body;
    return to_bytes(s);
}

bool is_response(ByteView payload) { return as_text(payload).rfind("HTTP/1.1 ", 0) == 0; }

std::optional<origin::HttpResponse> parse_response(ByteView payload) {
    auto t = as_text(payload);
    if (!is_response(payload)) return std::nullopt;
    size_t head_end = t.find("\r\n\r\n");
    if (head_end == std::string_view::npos) return std::nullopt;
    origin::HttpResponse r;
    size_t line_end = t.find("\r\n");
    r.status = std::stoi(std::string(t.substr(9, line_end - 9)));
    size_t pos = line_end + 2;
    while (pos < head_end) {
        size_t e = t.find("\r\n", pos);
        auto line = t.substr(pos, e - pos);
        size_t colon = line.find(": ");
        if (colon != std::string_view::npos) {
            std::string k(line.substr(0, colon)), v(line.substr(colon + 2));
            if (k == "Connection") r.close = (v == "close");
            else if (k != "Content-Length") r.headers[k] = v;
        }
        pos = e + 2;
    }
    r.body = std::string(t.substr(head_end + 4));
    return r;
}

std::optional<EnvelopeSpan> find_envelope(std::string_view text) {
    size_t pos = text.find(MARKER);
    if (pos == std::string_view::npos) return std::nullopt;
    EnvelopeSpan s;
    s.begin = pos + MARKER.size();
    s.end = s.begin;
    while (s.end < text.size() && is_b64url(text[s.end])) ++s.end;
    return s;
}

std::string replace_envelope(std::string_view text, std::string_view new_path) {
    auto span = find_envelope(text);
    auto repl = find_envelope(new_path);
    if (!span || !repl) return std::string(text);
    std::string out(text.substr(0, span->begin));
    out += new_path.substr(repl->begin, repl->end - repl->begin);
    out += text.substr(span->end);
    return out;
}

} // namespace opsec::http
