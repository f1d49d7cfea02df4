#include "evsteer/anchor_service.hpp"
#include "evsteer/event_model.hpp"

#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

using namespace evsteer;

namespace {

const std::string kDogPrompt =
    "On a snowy plain, a dog is running forward, then suddenly stops to sniff the ground, then continues running.";

AnchorRequest dog_request()
{
    AnchorRequest req;
    req.prompt = kDogPrompt;
    req.endpoint = "https://fixture.invalid/v1/chat/completions";
    req.auth_env = "EVSTEER_TEST_TOKEN";
    return req;
}

class FlakyTransport : public ChatTransport {
public:
    explicit FlakyTransport(int failures) : failures_(failures) {}
    HttpResponse post(const std::string&, const std::vector<Header>&, const std::string&) override
    {
        ++calls;
        if (failures_-- > 0) throw TransportError("connection refused");
        return {200, R"({"message": {"role": "assistant", "content": "running forward"}})"};
    }
    int calls = 0;

private:
    int failures_;
};

std::filesystem::path write_temp(const std::string& name, const std::string& text)
{
    const auto p = std::filesystem::temp_directory_path() / name;
    std::ofstream(p) << text;
    return p;
}

} // namespace

TEST(Anchors, DogFixtureAccepted)
{
    auto fixture = FixtureTransport::from_content("running forward, sniff the ground");
    const auto resp = extract_anchors(dog_request(), fixture);
    EXPECT_EQ(resp.phrases, (std::vector<std::string>{"running forward", "sniff the ground"}));
    ASSERT_EQ(resp.per_event.size(), 3u);
    EXPECT_EQ(resp.per_event[0], (std::vector<std::string>{"running forward"}));
    EXPECT_EQ(resp.per_event[1], (std::vector<std::string>{"sniff the ground"}));
    EXPECT_TRUE(resp.per_event[2].empty());
    EXPECT_EQ(fixture.calls(), 1);
}

TEST(Anchors, RequestShape)
{
    ::setenv("EVSTEER_TEST_TOKEN", "sk-test", 1);
    auto fixture = FixtureTransport::from_content("running forward");
    extract_anchors(dog_request(), fixture);
    ::unsetenv("EVSTEER_TEST_TOKEN");

    EXPECT_EQ(fixture.last_url(), "https://fixture.invalid/v1/chat/completions");
    const auto body = nlohmann::json::parse(fixture.last_body());
    EXPECT_EQ(body.at("model"), "gpt-4o");
    EXPECT_EQ(body.at("temperature"), 0);
    ASSERT_EQ(body.at("messages").size(), 2u);
    EXPECT_EQ(body["messages"][0]["role"], "system");
    EXPECT_EQ(body["messages"][0]["content"].get<std::string>(), std::string(kAnchorInstruction));
    EXPECT_EQ(body["messages"][1]["role"], "user");
    EXPECT_EQ(body["messages"][1]["content"], kDogPrompt);
    bool auth = false;
    for (const auto& [k, v] : fixture.last_headers()) auth = auth || (k == "Authorization" && v == "Bearer sk-test");
    EXPECT_TRUE(auth);
}

TEST(Anchors, NoTokenNoAuthHeader)
{
    ::unsetenv("EVSTEER_TEST_TOKEN");
    auto fixture = FixtureTransport::from_content("running forward");
    extract_anchors(dog_request(), fixture);
    for (const auto& h : fixture.last_headers()) EXPECT_NE(h.first, "Authorization");
}

TEST(Anchors, PhraseNotInPromptRejected)
{
    auto fixture = FixtureTransport::from_content("running forward, chasing a cat");
    try {
        extract_anchors(dog_request(), fixture);
        FAIL() << "expected AnchorValidationError";
    } catch (const AnchorValidationError& e) {
        EXPECT_EQ(e.phrase(), "chasing a cat");
    }
}

TEST(Anchors, MalformedResponses)
{
    FixtureTransport empty(HttpResponse{200, ""});
    EXPECT_THROW(extract_anchors(dog_request(), empty), MalformedResponseError);
    auto blank = FixtureTransport::from_content("   ");
    EXPECT_THROW(extract_anchors(dog_request(), blank), MalformedResponseError);
    auto multi = FixtureTransport::from_content("running forward\nsniff the ground");
    EXPECT_THROW(extract_anchors(dog_request(), multi), MalformedResponseError);
    auto hole = FixtureTransport::from_content("running forward,, sniff the ground");
    EXPECT_THROW(extract_anchors(dog_request(), hole), MalformedResponseError);
    FixtureTransport shape(HttpResponse{200, R"({"data": []})"});
    EXPECT_THROW(extract_anchors(dog_request(), shape), MalformedResponseError);
}

TEST(Anchors, HttpErrorIsTransportFailure)
{
    FixtureTransport err(HttpResponse{503, "busy"});
    EXPECT_THROW(extract_anchors(dog_request(), err), TransportError);
}

TEST(Anchors, SingleRetry)
{
    FlakyTransport once(1);
    EXPECT_EQ(extract_anchors(dog_request(), once).phrases.size(), 1u);
    EXPECT_EQ(once.calls, 2);

    FlakyTransport twice(2);
    EXPECT_THROW(extract_anchors(dog_request(), twice), TransportError);
    EXPECT_EQ(twice.calls, 2);
}

TEST(Anchors, OllamaShape)
{
    EXPECT_EQ(completion_content(R"({"message": {"content": "icy cave"}})"), "icy cave");
    EXPECT_EQ(completion_content(R"({"choices": [{"message": {"content": "icy cave"}}]})"), "icy cave");
}

TEST(Anchors, AuditLog)
{
    const auto path = std::filesystem::temp_directory_path() / "evsteer_audit.jsonl";
    std::filesystem::remove(path);
    auto req = dog_request();
    req.audit_file = path;
    auto fixture = FixtureTransport::from_content("running forward");
    extract_anchors(req, fixture);
    extract_anchors(req, fixture);
    std::ifstream in(path);
    std::string line;
    int lines = 0;
    while (std::getline(in, line)) {
        const auto entry = nlohmann::json::parse(line);
        EXPECT_TRUE(entry.contains("request"));
        EXPECT_EQ(entry.at("status"), 200);
        ++lines;
    }
    EXPECT_EQ(lines, 2);
    std::filesystem::remove(path);
}

TEST(Anchors, GroupingByPlanSegments)
{
    const std::vector<std::string> events{"A bear walks through a sunny desert,", "then it rests in an icy cave."};
    const std::string prompt = events[0] + " " + events[1];
    const auto r = parse_anchor_line("icy cave, sunny desert, bear walks", prompt, events);
    ASSERT_EQ(r.per_event.size(), 2u);
    EXPECT_EQ(r.per_event[0], (std::vector<std::string>{"sunny desert", "bear walks"}));
    EXPECT_EQ(r.per_event[1], (std::vector<std::string>{"icy cave"}));
}

TEST(Anchors, SegmentsAtThen)
{
    const auto starts = segment_prompt(kDogPrompt);
    ASSERT_EQ(starts.size(), 3u);
    EXPECT_EQ(starts[0], 0u);
    EXPECT_EQ(kDogPrompt.substr(starts[1], 4), "then");
    EXPECT_EQ(kDogPrompt.substr(starts[2], 4), "then");
    // "thence" or "authentic" must not split.
    EXPECT_EQ(segment_prompt("authentic thence").size(), 1u);
}

TEST(Anchors, ParseSerializeIdempotent)
{
    const auto r = parse_anchor_line(" running forward ,sniff the ground, continues running ", kDogPrompt);
    const auto again = parse_anchor_line(serialize_anchor_line(r), kDogPrompt);
    EXPECT_EQ(again.phrases, r.phrases);
    EXPECT_EQ(again.per_event, r.per_event);
    EXPECT_EQ(serialize_anchor_line(again), serialize_anchor_line(r));
}

TEST(AnchorsFromFile, ValidPlan)
{
    const auto p = write_temp("evsteer_anchor_plan.json", R"({
      "latent_frames": 8,
      "events": [{"text": "a sunny desert", "anchors": ["sunny desert"]},
                 {"text": "then an icy cave", "anchors": ["icy cave", "cave"]}]})");
    const auto r = anchors_from_file(p);
    ASSERT_EQ(r.per_event.size(), 2u);
    EXPECT_EQ(r.per_event[1], (std::vector<std::string>{"icy cave", "cave"}));
    EXPECT_TRUE(r.warnings.empty());
    std::filesystem::remove(p);
}

TEST(AnchorsFromFile, MissingFieldNamesEvent)
{
    const auto p = write_temp("evsteer_anchor_missing.json", R"({
      "latent_frames": 8,
      "events": [{"text": "a sunny desert", "anchors": ["sunny desert"]}, {"text": "then an icy cave"}]})");
    try {
        anchors_from_file(p);
        FAIL() << "expected ValidationError";
    } catch (const ValidationError& e) {
        EXPECT_NE(std::string(e.what()).find("event 1"), std::string::npos);
    }
    std::filesystem::remove(p);
}

TEST(AnchorsFromFile, DuplicateWarnsAndSubstringEnforced)
{
    const auto dup = write_temp("evsteer_anchor_dup.json", R"({
      "latent_frames": 8,
      "events": [{"text": "a dog running", "anchors": ["running"]}, {"text": "then running again", "anchors": ["running"]}]})");
    EXPECT_FALSE(anchors_from_file(dup).warnings.empty());
    std::filesystem::remove(dup);

    const auto bad = write_temp("evsteer_anchor_bad.json", R"({
      "latent_frames": 8,
      "events": [{"text": "a dog running", "anchors": ["flying"]}, {"text": "then resting", "anchors": ["resting"]}]})");
    EXPECT_THROW(anchors_from_file(bad), AnchorValidationError);
    std::filesystem::remove(bad);

    EXPECT_THROW(anchors_from_file("/nonexistent/anchors.json"), IoError);
}
