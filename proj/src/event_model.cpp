#include "evsteer/event_model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace evsteer {

namespace {

constexpr double kFracTolerance = 1e-9;

std::string trim(const std::string& s)
{
    const auto first = s.find_first_not_of(" \t\r\n");
    if (first == std::string::npos) return {};
    const auto last = s.find_last_not_of(" \t\r\n");
    return s.substr(first, last - first + 1);
}

bool is_punct_token(const std::string& t)
{
    return !t.empty() && std::all_of(t.begin(), t.end(), [](unsigned char c) { return std::ispunct(c) != 0; });
}

std::string lower_ascii(std::string s)
{
    for (auto& c : s) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
    return s;
}

// Collapses whitespace runs and drops whitespace before punctuation so a
// phrase lines up with the detokenized text.
std::string normalize_phrase(const std::string& phrase)
{
    std::string out;
    bool pending_space = false;
    for (unsigned char c : trim(phrase)) {
        if (std::isspace(c)) {
            pending_space = true;
            continue;
        }
        if (pending_space && !std::ispunct(c) && !out.empty()) out.push_back(' ');
        pending_space = false;
        out.push_back(static_cast<char>(c));
    }
    return lower_ascii(out);
}

struct Detokenized {
    std::string text;
    // [begin, end) character span per token, parallel to `positions`.
    std::vector<std::pair<std::size_t, std::size_t>> spans;
    std::vector<std::size_t> positions;
};

Detokenized detokenize(std::span<const Token> tokens)
{
    std::vector<Token> sorted(tokens.begin(), tokens.end());
    std::stable_sort(sorted.begin(), sorted.end(),
                     [](const Token& a, const Token& b) { return a.position < b.position; });

    // With SentencePiece or byte-level BPE markers present, an unmarked piece
    // continues the previous word.
    const bool marked = std::any_of(sorted.begin(), sorted.end(), [](const Token& t) {
        return t.text.rfind("\xE2\x96\x81", 0) == 0 || t.text.rfind("\xC4\xA0", 0) == 0;
    });

    Detokenized out;
    for (const auto& tok : sorted) {
        std::string piece = tok.text;
        bool attach = false;
        if (piece.rfind("##", 0) == 0) {
            piece.erase(0, 2);
            attach = true;
        } else if (piece.rfind("\xE2\x96\x81", 0) == 0) {  // SentencePiece word marker
            piece.erase(0, 3);
        } else if (piece.rfind("\xC4\xA0", 0) == 0) {  // byte-level BPE space marker
            piece.erase(0, 2);
        } else if (is_punct_token(piece) || marked) {
            attach = true;
        }
        if (!out.text.empty() && !attach && !piece.empty()) out.text.push_back(' ');
        const std::size_t begin = out.text.size();
        out.text += lower_ascii(piece);
        out.spans.emplace_back(begin, out.text.size());
        out.positions.push_back(tok.position);
    }
    return out;
}

} // namespace

ResolutionError::ResolutionError(std::vector<std::string> unresolved)
    : ValidationError([&] {
          std::string msg = "unresolved anchor phrases:";
          for (const auto& u : unresolved) msg += " [" + u + "]";
          return msg;
      }()),
      unresolved_(std::move(unresolved))
{
}

std::string EventPlan::prompt_text() const
{
    if (!prompt.empty()) return prompt;
    std::string out;
    for (const auto& e : events) {
        if (!out.empty()) out.push_back(' ');
        out += e.text;
    }
    return out;
}

std::vector<double> EventPlan::weights() const
{
    std::vector<double> w;
    w.reserve(events.size());
    for (const auto& e : events) w.push_back(e.weight);
    return w;
}

std::vector<int> SpanAssignment::widths() const
{
    std::vector<int> w;
    w.reserve(spans.size());
    for (const auto& s : spans) w.push_back(s.width());
    return w;
}

SpanAssignment assign_windows(std::span<const double> weights, int latent_frames)
{
    if (weights.empty()) throw ValidationError("assign_windows: empty weight list");
    if (latent_frames < 1) throw ValidationError("assign_windows: latent_frames must be >= 1");
    for (double w : weights) {
        if (!(w > 0.0) || !std::isfinite(w)) throw ValidationError("assign_windows: nonpositive weight");
    }

    const double total = std::accumulate(weights.begin(), weights.end(), 0.0);
    const std::size_t n = weights.size();
    std::vector<int> widths(n);
    std::vector<double> frac(n);
    int assigned = 0;
    for (std::size_t i = 0; i < n; ++i) {
        const double target = static_cast<double>(latent_frames) * weights[i] / total;
        const double base = std::floor(target + kFracTolerance);
        widths[i] = static_cast<int>(base);
        frac[i] = std::max(0.0, target - base);
        assigned += widths[i];
    }

    int remainder = latent_frames - assigned;
    if (remainder < 0 || remainder > static_cast<int>(n)) {
        throw std::logic_error("assign_windows: inconsistent rounding remainder");
    }
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        if (std::abs(frac[a] - frac[b]) <= kFracTolerance) return a < b;
        return frac[a] > frac[b];
    });
    for (std::size_t k = 0; k < static_cast<std::size_t>(remainder); ++k) ++widths[order[k]];

    SpanAssignment out;
    int cursor = 0;
    for (std::size_t i = 0; i < n; ++i) {
        out.spans.push_back(Span{i, cursor, cursor + widths[i]});
        cursor += widths[i];
    }
    return out;
}

RowRange span_row_indices(const Span& span, int tokens_per_frame)
{
    if (tokens_per_frame < 1 || span.start < 0 || span.end < span.start) {
        throw ValidationError("span_row_indices: invalid span or tokens_per_frame");
    }
    const auto tpf = static_cast<std::size_t>(tokens_per_frame);
    return RowRange{static_cast<std::size_t>(span.start) * tpf, static_cast<std::size_t>(span.end) * tpf};
}

AnchorIndexSet resolve_anchor_indices(const EventPlan& plan, std::span<const Token> tokenization)
{
    const Detokenized detok = detokenize(tokenization);

    AnchorIndexSet out;
    out.per_event.resize(plan.events.size());
    std::vector<std::string> unresolved;

    for (std::size_t e = 0; e < plan.events.size(); ++e) {
        std::set<std::size_t> hits;
        for (const auto& raw : plan.events[e].anchor_phrases) {
            const std::string phrase = normalize_phrase(raw);
            bool found = false;
            if (!phrase.empty()) {
                for (auto at = detok.text.find(phrase); at != std::string::npos;
                     at = detok.text.find(phrase, at + 1)) {
                    const std::size_t stop = at + phrase.size();
                    for (std::size_t t = 0; t < detok.spans.size(); ++t) {
                        const auto [b, en] = detok.spans[t];
                        if (b < stop && at < en) {
                            hits.insert(detok.positions[t]);
                            found = true;
                        }
                    }
                }
            }
            if (!found) unresolved.push_back("event " + std::to_string(plan.events[e].event_id) + ": " + raw);
        }
        out.per_event[e].assign(hits.begin(), hits.end());
    }
    if (!unresolved.empty()) throw ResolutionError(std::move(unresolved));

    for (std::size_t a = 0; a < out.per_event.size(); ++a) {
        for (std::size_t b = a + 1; b < out.per_event.size(); ++b) {
            std::vector<std::size_t> shared;
            std::set_intersection(out.per_event[a].begin(), out.per_event[a].end(), out.per_event[b].begin(),
                                  out.per_event[b].end(), std::back_inserter(shared));
            for (auto pos : shared) {
                out.warnings.push_back("token " + std::to_string(pos) + " is an anchor of events " +
                                       std::to_string(a) + " and " + std::to_string(b));
            }
        }
    }
    return out;
}

PlanReport validate_plan(const EventPlan& plan)
{
    PlanReport report;
    if (plan.events.size() < 2) report.violations.emplace_back("plan needs at least two events");
    if (plan.latent_frames < 1) report.violations.emplace_back("latent_frames must be positive");
    if (plan.tokens_per_frame < 1) report.violations.emplace_back("tokens_per_frame must be positive");

    std::set<std::string> seen;
    for (std::size_t i = 0; i < plan.events.size(); ++i) {
        const auto& ev = plan.events[i];
        const std::string tag = "event " + std::to_string(i) + ": ";
        if (ev.event_id != i) report.violations.push_back(tag + "event_id out of order");
        if (!(ev.weight > 0.0) || !std::isfinite(ev.weight)) report.violations.push_back(tag + "nonpositive weight");
        if (ev.anchor_phrases.empty()) report.violations.push_back(tag + "no anchor phrases");
        for (const auto& p : ev.anchor_phrases) {
            const std::string t = trim(p);
            if (t.empty()) {
                report.violations.push_back(tag + "empty anchor phrase");
                continue;
            }
            const std::string key = normalize_phrase(t);
            if (seen.count(key) != 0) report.warnings.push_back(tag + "anchor phrase '" + t + "' shared with another event");
            seen.insert(key);
        }
    }

    if (plan.latent_frames >= 1 && !plan.events.empty() &&
        static_cast<std::size_t>(plan.latent_frames) < plan.events.size()) {
        report.warnings.emplace_back("some spans have zero width");
    } else if (report.violations.empty()) {
        const auto w = plan.weights();
        const auto spans = assign_windows(w, plan.latent_frames);
        for (const auto& s : spans.spans) {
            if (s.empty()) {
                report.warnings.emplace_back("some spans have zero width");
                break;
            }
        }
    }
    return report;
}

std::string format_spans(const SpanAssignment& spans)
{
    std::ostringstream os;
    for (std::size_t i = 0; i < spans.spans.size(); ++i) {
        if (i) os << ',';
        os << '[' << spans.spans[i].start << ',' << spans.spans[i].end << ')';
    }
    return os.str();
}

EventPlan plan_from_json(const nlohmann::json& doc)
{
    if (!doc.is_object()) throw ValidationError("plan: document must be a JSON object");
    EventPlan plan;
    try {
        plan.latent_frames = doc.at("latent_frames").get<int>();
        plan.tokens_per_frame = doc.value("tokens_per_frame", 1);
        plan.prompt = doc.value("prompt", std::string{});
        const auto& events = doc.at("events");
        if (!events.is_array()) throw ValidationError("plan: 'events' must be an array");
        for (std::size_t i = 0; i < events.size(); ++i) {
            const auto& ev = events[i];
            EventSpec spec;
            spec.event_id = i;
            spec.text = ev.value("text", std::string{});
            if (ev.contains("anchors")) spec.anchor_phrases = ev.at("anchors").get<std::vector<std::string>>();
            if (ev.contains("weight")) spec.weight = ev.at("weight").get<double>();
            plan.events.push_back(std::move(spec));
        }
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError(std::string("plan: ") + ex.what());
    }
    return plan;
}

nlohmann::json plan_to_json(const EventPlan& plan)
{
    nlohmann::json doc;
    doc["latent_frames"] = plan.latent_frames;
    doc["tokens_per_frame"] = plan.tokens_per_frame;
    if (!plan.prompt.empty()) doc["prompt"] = plan.prompt;
    doc["events"] = nlohmann::json::array();
    for (const auto& ev : plan.events) {
        doc["events"].push_back({{"text", ev.text}, {"anchors", ev.anchor_phrases}, {"weight", ev.weight}});
    }
    return doc;
}

EventPlan load_plan(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open plan file: " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& ex) {
        throw ValidationError("plan: malformed JSON in " + path.string() + ": " + ex.what());
    }
    return plan_from_json(doc);
}

nlohmann::json spans_to_json(const SpanAssignment& spans)
{
    nlohmann::json arr = nlohmann::json::array();
    for (const auto& s : spans.spans) {
        arr.push_back({{"event_id", s.event_id}, {"start", s.start}, {"end", s.end}});
    }
    return arr;
}

std::vector<Token> whitespace_tokenize(const std::string& text)
{
    std::vector<Token> out;
    std::istringstream is(text);
    std::string word;
    std::size_t pos = 0;
    while (is >> word) {
        // Split leading/trailing punctuation into separate tokens.
        std::size_t b = 0;
        std::size_t e = word.size();
        while (b < e && std::ispunct(static_cast<unsigned char>(word[b]))) {
            out.push_back(Token{word.substr(b, 1), pos++});
            ++b;
        }
        while (e > b && std::ispunct(static_cast<unsigned char>(word[e - 1]))) --e;
        if (e > b) out.push_back(Token{word.substr(b, e - b), pos++});
        for (std::size_t k = std::max(e, b); k < word.size(); ++k) out.push_back(Token{word.substr(k, 1), pos++});
    }
    return out;
}

} // namespace evsteer
