#include "evsteer/anchor_service.hpp"

#include <httplib.h>

namespace evsteer {

namespace {

struct UrlParts {
    std::string origin;  // scheme://host[:port]
    std::string path;
};

UrlParts split_url(const std::string& url)
{
    const auto scheme_end = url.find("://");
    if (scheme_end == std::string::npos) throw TransportError("endpoint URL has no scheme: " + url);
    const auto path_start = url.find('/', scheme_end + 3);
    if (path_start == std::string::npos) return {url, "/"};
    return {url.substr(0, path_start), url.substr(path_start)};
}

} // namespace

HttpResponse HttpTransport::post(const std::string& url, const std::vector<Header>& headers, const std::string& body)
{
    const UrlParts parts = split_url(url);
    httplib::Client client(parts.origin);
    if (!client.is_valid()) throw TransportError("unsupported endpoint: " + url);
    client.set_connection_timeout(timeout_seconds_);
    client.set_read_timeout(timeout_seconds_);

    httplib::Headers hdrs;
    std::string content_type = "application/json";
    for (const auto& [k, v] : headers) {
        if (k == "Content-Type") {
            content_type = v;
        } else {
            hdrs.emplace(k, v);
        }
    }
    auto result = client.Post(parts.path, hdrs, body, content_type);
    if (!result) throw TransportError("request to " + url + " failed: " + httplib::to_string(result.error()));
    return HttpResponse{result->status, result->body};
}

} // namespace evsteer
