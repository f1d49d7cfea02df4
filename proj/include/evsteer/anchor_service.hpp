#pragma once

#include "evsteer/common.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace evsteer {

// System instruction sent with every anchor extraction request.
extern const std::string_view kAnchorInstruction;

class TransportError : public IoError {
public:
    using IoError::IoError;
};

class MalformedResponseError : public ValidationError {
public:
    using ValidationError::ValidationError;
};

class AnchorValidationError : public ValidationError {
public:
    AnchorValidationError(const std::string& message, std::string phrase)
        : ValidationError(message), phrase_(std::move(phrase))
    {
    }
    [[nodiscard]] const std::string& phrase() const { return phrase_; }

private:
    std::string phrase_;
};

using Header = std::pair<std::string, std::string>;

struct HttpResponse {
    int status = 0;
    std::string body;
};

class ChatTransport {
public:
    virtual ~ChatTransport() = default;
    // Throws TransportError when the endpoint cannot be reached.
    virtual HttpResponse post(const std::string& url, const std::vector<Header>& headers, const std::string& body) = 0;
};

// Real HTTP(S) POST via cpp-httplib.
class HttpTransport : public ChatTransport {
public:
    explicit HttpTransport(int timeout_seconds = 60) : timeout_seconds_(timeout_seconds) {}
    HttpResponse post(const std::string& url, const std::vector<Header>& headers, const std::string& body) override;

private:
    int timeout_seconds_;
};

// Offline provider: replays a canned response and records the request.
class FixtureTransport : public ChatTransport {
public:
    explicit FixtureTransport(HttpResponse response) : response_(std::move(response)) {}

    // Wraps `content` in a chat-completion response body.
    static FixtureTransport from_content(const std::string& content);

    HttpResponse post(const std::string& url, const std::vector<Header>& headers, const std::string& body) override;

    [[nodiscard]] int calls() const { return calls_; }
    [[nodiscard]] const std::string& last_url() const { return last_url_; }
    [[nodiscard]] const std::string& last_body() const { return last_body_; }
    [[nodiscard]] const std::vector<Header>& last_headers() const { return last_headers_; }

private:
    HttpResponse response_;
    int calls_ = 0;
    std::string last_url_;
    std::string last_body_;
    std::vector<Header> last_headers_;
};

struct AnchorRequest {
    std::string prompt;
    std::string endpoint;
    std::string model = "gpt-4o";
    std::string auth_env = "ANCHOR_API_KEY";  // name of the variable holding the bearer token
    // Optional event texts, in order, used to segment the prompt. Empty means
    // segment at each "then".
    std::vector<std::string> event_texts;
    std::optional<std::filesystem::path> audit_file;
    int retries = 1;
};

struct AnchorResponse {
    std::vector<std::string> phrases;                 // in response order
    std::vector<std::vector<std::string>> per_event;  // grouped by event segment
    std::string raw;                                  // content line as received
    std::vector<std::string> warnings;
};

nlohmann::json build_request_body(const AnchorRequest& req);

// Character offsets where each event segment starts within `prompt`.
std::vector<std::size_t> segment_prompt(const std::string& prompt, std::span<const std::string> event_texts = {});

// Parses one comma-separated anchor line, checks every phrase is a substring
// of the prompt and groups phrases by the segment of their first occurrence.
AnchorResponse parse_anchor_line(const std::string& content, const std::string& prompt,
                                 std::span<const std::string> event_texts = {});

std::string serialize_anchor_line(const AnchorResponse& response);

// Extracts the assistant text from an OpenAI-style or Ollama-style response body.
std::string completion_content(const std::string& body);

AnchorResponse extract_anchors(const AnchorRequest& req, ChatTransport& transport);

struct AnchorFileResult {
    std::vector<std::vector<std::string>> per_event;
    std::vector<std::string> warnings;
};

// Reads the "anchors" arrays of a plan JSON file with the same validation as extract_anchors.
AnchorFileResult anchors_from_file(const std::filesystem::path& path);

} // namespace evsteer
