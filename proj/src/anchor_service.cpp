#include "evsteer/anchor_service.hpp"

#include "evsteer/event_model.hpp"

#include <algorithm>
#include <cctype>
#include <cstdlib>
#include <fstream>
#include <set>

namespace evsteer {

const std::string_view kAnchorInstruction =
    "You are an assistant that analyzes a single text prompt describing a video with multiple temporally ordered "
    "events.\n"
    "Your goal is to identify, for each event, a set of anchor phrases that clearly distinguish this event from the "
    "others. Anchors should be short noun phrases or verb phrases taken directly from the prompt, such as setting "
    "descriptors like \"sunny desert\" or \"icy cave\" or concise action phrases like \"walking forward\" or "
    "\"reading a book\".\n"
    "Requirements:\n"
    "1. Do NOT invent new events. Only use events that are explicitly described in the input prompt.\n"
    "2. Every anchor phrase must be a substring of the original prompt.\n"
    "3. Omit the shared subject and transitional words. Keep the full remaining verb phrase that describes what is "
    "happening in that specific event.\n"
    "Input format: I will give you one prompt that may contain multiple events in temporal order.\n"
    "Output format: List all anchor phrases you extract for this prompt on a single line, separated by commas, with "
    "no additional explanations.\n"
    "Now analyze the following prompt and return the anchors in the exact format above.";

namespace {

std::string trim(std::string_view s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string_view::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(first, last - first + 1));
}

bool is_word_char(char c)
{
    return std::isalnum(static_cast<unsigned char>(c)) != 0;
}

void append_audit(const std::filesystem::path& path, const nlohmann::json& entry)
{
    std::ofstream out(path, std::ios::app);
    if (!out) throw IoError("cannot open audit file: " + path.string());
    out << entry.dump() << '\n';
}

} // namespace

FixtureTransport FixtureTransport::from_content(const std::string& content)
{
    const nlohmann::json body = {
        {"object", "chat.completion"},
        {"choices", nlohmann::json::array({{{"index", 0},
                                            {"message", {{"role", "assistant"}, {"content", content}}},
                                            {"finish_reason", "stop"}}})}};
    return FixtureTransport(HttpResponse{200, body.dump()});
}

HttpResponse FixtureTransport::post(const std::string& url, const std::vector<Header>& headers, const std::string& body)
{
    ++calls_;
    last_url_ = url;
    last_headers_ = headers;
    last_body_ = body;
    return response_;
}

nlohmann::json build_request_body(const AnchorRequest& req)
{
    return {{"model", req.model},
            {"temperature", 0},
            {"messages",
             nlohmann::json::array({{{"role", "system"}, {"content", kAnchorInstruction}},
                                    {{"role", "user"}, {"content", req.prompt}}})}};
}

std::vector<std::size_t> segment_prompt(const std::string& prompt, std::span<const std::string> event_texts)
{
    if (!event_texts.empty()) {
        std::vector<std::size_t> starts;
        std::size_t cursor = 0;
        bool all_found = true;
        for (const auto& text : event_texts) {
            const std::string needle = trim(text);
            const auto at = needle.empty() ? std::string::npos : prompt.find(needle, cursor);
            if (at == std::string::npos) {
                all_found = false;
                break;
            }
            starts.push_back(at);
            cursor = at + needle.size();
        }
        if (all_found) {
            starts.front() = 0;
            return starts;
        }
    }

    std::vector<std::size_t> starts{0};
    std::string lower(prompt);
    std::transform(lower.begin(), lower.end(), lower.begin(),
                   [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    for (auto at = lower.find("then"); at != std::string::npos; at = lower.find("then", at + 4)) {
        const bool left = at == 0 || !is_word_char(lower[at - 1]);
        const bool right = at + 4 >= lower.size() || !is_word_char(lower[at + 4]);
        if (left && right && at > 0) starts.push_back(at);
    }
    return starts;
}

AnchorResponse parse_anchor_line(const std::string& content, const std::string& prompt,
                                 std::span<const std::string> event_texts)
{
    AnchorResponse out;
    out.raw = content;
    const std::string line = trim(content);
    if (line.empty()) throw MalformedResponseError("anchor response is empty");
    if (line.find('\n') != std::string::npos) throw MalformedResponseError("anchor response spans multiple lines");

    std::size_t from = 0;
    while (from <= line.size()) {
        const auto comma = line.find(',', from);
        const std::string piece = trim(std::string_view(line).substr(from, comma == std::string::npos ? std::string::npos : comma - from));
        if (piece.empty()) throw MalformedResponseError("anchor response contains an empty phrase");
        out.phrases.push_back(piece);
        if (comma == std::string::npos) break;
        from = comma + 1;
    }

    const auto starts = segment_prompt(prompt, event_texts);
    const std::size_t groups = event_texts.empty() ? starts.size() : std::max(starts.size(), event_texts.size());
    out.per_event.assign(groups, {});
    for (const auto& phrase : out.phrases) {
        const auto at = prompt.find(phrase);
        if (at == std::string::npos) {
            throw AnchorValidationError("anchor phrase '" + phrase + "' is not a substring of the prompt", phrase);
        }
        const auto seg = static_cast<std::size_t>(std::upper_bound(starts.begin(), starts.end(), at) - starts.begin()) - 1;
        out.per_event[seg].push_back(phrase);
    }
    for (std::size_t e = 0; e < out.per_event.size(); ++e) {
        if (out.per_event[e].empty()) out.warnings.push_back("event " + std::to_string(e) + " received no anchor phrases");
    }
    return out;
}

std::string serialize_anchor_line(const AnchorResponse& response)
{
    std::string line;
    for (const auto& p : response.phrases) {
        if (!line.empty()) line += ", ";
        line += p;
    }
    return line;
}

std::string completion_content(const std::string& body)
{
    if (trim(body).empty()) throw MalformedResponseError("empty response body");
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(body);
    } catch (const nlohmann::json::parse_error& ex) {
        throw MalformedResponseError(std::string("response body is not JSON: ") + ex.what());
    }
    try {
        if (doc.contains("choices")) return doc.at("choices").at(0).at("message").at("content").get<std::string>();
        if (doc.contains("message")) return doc.at("message").at("content").get<std::string>();
    } catch (const nlohmann::json::exception& ex) {
        throw MalformedResponseError(std::string("unexpected response shape: ") + ex.what());
    }
    throw MalformedResponseError("response has neither 'choices' nor 'message'");
}

AnchorResponse extract_anchors(const AnchorRequest& req, ChatTransport& transport)
{
    if (trim(req.prompt).empty()) throw ValidationError("anchor request: prompt is empty");

    std::vector<Header> headers{{"Content-Type", "application/json"}};
    if (!req.auth_env.empty()) {
        if (const char* token = std::getenv(req.auth_env.c_str()); token != nullptr && *token != '\0') {
            headers.emplace_back("Authorization", std::string("Bearer ") + token);
        }
    }
    const nlohmann::json body = build_request_body(req);
    const std::string payload = body.dump();

    HttpResponse response;
    for (int attempt = 0;; ++attempt) {
        try {
            response = transport.post(req.endpoint, headers, payload);
            break;
        } catch (const TransportError&) {
            if (attempt >= req.retries) throw;
        }
    }
    if (req.audit_file) {
        append_audit(*req.audit_file, {{"request", body}, {"status", response.status}, {"response", response.body}});
    }
    if (response.status < 200 || response.status >= 300) {
        throw TransportError("anchor endpoint returned HTTP " + std::to_string(response.status));
    }
    return parse_anchor_line(completion_content(response.body), req.prompt, req.event_texts);
}

AnchorFileResult anchors_from_file(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open anchor file: " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& ex) {
        throw ValidationError("anchor file: malformed JSON in " + path.string() + ": " + ex.what());
    }
    if (!doc.is_object() || !doc.contains("events") || !doc["events"].is_array()) {
        throw ValidationError("anchor file: missing 'events' array");
    }
    for (std::size_t i = 0; i < doc["events"].size(); ++i) {
        if (!doc["events"][i].contains("anchors")) {
            throw ValidationError("anchor file: event " + std::to_string(i) + " has no 'anchors' field");
        }
    }

    const EventPlan plan = plan_from_json(doc);
    const std::string prompt = plan.prompt_text();
    AnchorFileResult out;
    std::set<std::string> seen;
    for (const auto& ev : plan.events) {
        for (const auto& raw : ev.anchor_phrases) {
            const std::string phrase = trim(raw);
            if (phrase.empty()) throw ValidationError("anchor file: event " + std::to_string(ev.event_id) + " has an empty phrase");
            if (prompt.find(phrase) == std::string::npos) {
                throw AnchorValidationError("anchor phrase '" + phrase + "' of event " + std::to_string(ev.event_id) +
                                                " is not a substring of the prompt",
                                            phrase);
            }
            if (!seen.insert(phrase).second) {
                out.warnings.push_back("anchor phrase '" + phrase + "' appears in more than one event");
            }
        }
        out.per_event.push_back(ev.anchor_phrases);
    }
    return out;
}

} // namespace evsteer
