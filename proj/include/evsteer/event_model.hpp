#pragma once

#include "evsteer/common.hpp"

#include <nlohmann/json.hpp>

#include <cstddef>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

namespace evsteer {

struct EventSpec {
    std::size_t event_id = 0;
    std::string text;
    std::vector<std::string> anchor_phrases;
    double weight = 1.0;  // relative duration weight
};

struct EventPlan {
    std::vector<EventSpec> events;
    int latent_frames = 0;
    int tokens_per_frame = 1;
    // Full prompt text. Empty means the event texts joined by single spaces.
    std::string prompt;

    [[nodiscard]] std::string prompt_text() const;
    [[nodiscard]] std::vector<double> weights() const;
};

// Half-open latent-frame interval [start, end).
struct Span {
    std::size_t event_id = 0;
    int start = 0;
    int end = 0;

    [[nodiscard]] int width() const { return end - start; }
    [[nodiscard]] bool empty() const { return end <= start; }
    bool operator==(const Span&) const = default;
};

struct SpanAssignment {
    std::vector<Span> spans;

    [[nodiscard]] std::vector<int> widths() const;
    [[nodiscard]] int total_frames() const { return spans.empty() ? 0 : spans.back().end; }
    bool operator==(const SpanAssignment&) const = default;
};

struct RowRange {
    std::size_t begin = 0;
    std::size_t end = 0;

    [[nodiscard]] std::size_t size() const { return end - begin; }
    [[nodiscard]] bool empty() const { return end <= begin; }
    bool operator==(const RowRange&) const = default;
};

struct Token {
    std::string text;
    std::size_t position = 0;
};

// Sorted token positions per event.
struct AnchorIndexSet {
    std::vector<std::vector<std::size_t>> per_event;
    std::vector<std::string> warnings;

    [[nodiscard]] std::size_t event_count() const { return per_event.size(); }
};

struct PlanReport {
    std::vector<std::string> violations;
    std::vector<std::string> warnings;

    [[nodiscard]] bool usable() const { return violations.empty(); }
};

// Raised when one or more anchor phrases match no token. `unresolved` holds
// "event <id>: <phrase>" entries.
class ResolutionError : public ValidationError {
public:
    explicit ResolutionError(std::vector<std::string> unresolved);
    [[nodiscard]] const std::vector<std::string>& unresolved() const { return unresolved_; }

private:
    std::vector<std::string> unresolved_;
};

// Largest-remainder apportionment of `latent_frames` over the weights.
// Fractional-part ties go to the earliest event.
SpanAssignment assign_windows(std::span<const double> weights, int latent_frames);

RowRange span_row_indices(const Span& span, int tokens_per_frame);

AnchorIndexSet resolve_anchor_indices(const EventPlan& plan, std::span<const Token> tokenization);

PlanReport validate_plan(const EventPlan& plan);

// "[0,5),[5,10)"
std::string format_spans(const SpanAssignment& spans);

// JSON document: {"latent_frames", "tokens_per_frame", "events": [{"text", "anchors", "weight"}]}
// plus an optional "prompt". Missing weights default to 1 (equal split).
// Structural problems throw ValidationError; semantic checks belong to validate_plan.
EventPlan plan_from_json(const nlohmann::json& doc);
nlohmann::json plan_to_json(const EventPlan& plan);
EventPlan load_plan(const std::filesystem::path& path);

nlohmann::json spans_to_json(const SpanAssignment& spans);

// Whitespace-split tokenization of a prompt with sequential positions.
std::vector<Token> whitespace_tokenize(const std::string& text);

} // namespace evsteer
