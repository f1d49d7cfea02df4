#include "cli.hpp"
#include "config.hpp"

#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

namespace fs = std::filesystem;

namespace {

struct Result {
    int code = -1;
    std::string out;
    std::string err;
};

Result invoke(std::vector<std::string> args)
{
    args.insert(args.begin(), "evsteer");
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out;
    std::ostringstream err;
    Result r;
    r.code = evsteer::cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
}

std::string slurp(const fs::path& p)
{
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

class CliTest : public ::testing::Test {
protected:
    void SetUp() override
    {
        dir = fs::temp_directory_path() / ("evsteer_cli_" + std::string(::testing::UnitTest::GetInstance()->current_test_info()->name()));
        fs::remove_all(dir);
        fs::create_directories(dir);
    }
    void TearDown() override { fs::remove_all(dir); }

    fs::path write(const std::string& name, const std::string& text) const
    {
        const auto p = dir / name;
        std::ofstream(p) << text;
        return p;
    }

    fs::path dir;
};

const char* kTwoEvents = R"({"latent_frames": %d, "events": [
  {"text": "a dog running", "anchors": ["running"], "weight": %s},
  {"text": "then sniffing", "anchors": ["sniffing"], "weight": %s}]})";

std::string plan_json(int frames, const char* w0, const char* w1)
{
    char buf[512];
    std::snprintf(buf, sizeof buf, kTwoEvents, frames, w0, w1);
    return buf;
}

} // namespace

TEST_F(CliTest, PlanEqualWeights)
{
    const auto p = write("plan.json", plan_json(10, "1", "1"));
    const auto r = invoke({"plan", p.string(), "--out", (dir / "o").string()});
    EXPECT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(r.out, "[0,5),[5,10)\n");
    EXPECT_TRUE(fs::exists(dir / "o" / "spans.json"));
}

TEST_F(CliTest, PlanUnequalWeights)
{
    const auto p = write("plan.json", plan_json(9, "1", "2"));
    const auto r = invoke({"plan", p.string()});
    EXPECT_EQ(r.code, 0);
    EXPECT_EQ(r.out, "[0,3),[3,9)\n");
}

TEST_F(CliTest, PlanInvalidWeight)
{
    const auto p = write("plan.json", plan_json(9, "0", "2"));
    const auto r = invoke({"plan", p.string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("nonpositive weight"), std::string::npos);
}

TEST_F(CliTest, PlanMissingFile)
{
    EXPECT_EQ(invoke({"plan", (dir / "nope.json").string()}).code, 2);
}

TEST_F(CliTest, SolveZeroDeficit)
{
    const auto p = write("inst.json", R"({"s_tgt": [2, 3], "s_oth_max": [0.5, -1], "margin_eps": 0.05})");
    for (const char* mode : {"paper", "active-set"}) {
        const auto r = invoke({"--solver", mode, "solve", p.string()});
        ASSERT_EQ(r.code, 0) << r.err;
        const auto doc = nlohmann::json::parse(r.out);
        EXPECT_EQ(doc.at("alpha").get<double>(), 0.0);
        EXPECT_EQ(doc.at("beta").get<double>(), 0.0);
        EXPECT_EQ(doc.at("mode"), mode);
    }
}

TEST_F(CliTest, SolveScalar)
{
    const auto p = write("inst.json", R"({"s_tgt": [1], "s_oth_max": [2], "margin_eps": 0})");
    const auto r = invoke({"solve", p.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto doc = nlohmann::json::parse(r.out);
    EXPECT_NEAR(doc.at("alpha").get<double>(), 1.0 / 3.0, 1e-8);
    EXPECT_NEAR(doc.at("beta").get<double>(), 1.0 / 6.0, 1e-8);
    EXPECT_EQ(doc.at("schema_version"), 1);
}

TEST_F(CliTest, SolveFromQueries)
{
    const auto p = write("inst.json", R"({"q_star": [[2, 0, 0]], "k_tgt": [1, 0, 0], "k_oth": [[0, 1, 0]]})");
    const auto r = invoke({"solve", p.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(nlohmann::json::parse(r.out).at("alpha").get<double>(), 0.0);
}

TEST_F(CliTest, SolveMalformed)
{
    const auto p = write("inst.json", "{ s_tgt: ");
    const auto r = invoke({"solve", p.string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_FALSE(r.err.empty());
    const auto q = write("short.json", R"({"s_tgt": [1, 2], "s_oth_max": [1]})");
    EXPECT_EQ(invoke({"solve", q.string()}).code, 1);
}

TEST_F(CliTest, BadFlagValues)
{
    EXPECT_EQ(invoke({"--solver", "newton", "steer-sim"}).code, 1);
    EXPECT_EQ(invoke({"--format", "xml", "steer-sim"}).code, 1);
    EXPECT_EQ(invoke({}).code, 1);
}

TEST_F(CliTest, SteerSimDeterministic)
{
    const std::string small = R"({"schedule": {"steer_steps": 2, "steer_blocks": 2, "total_steps": 4, "total_blocks": 3}})";
    const auto cfg = write("cfg.json", small);
    const auto a = invoke({"--config", cfg.string(), "--seed", "3", "steer-sim", "--out", (dir / "a").string()});
    const auto b = invoke({"steer-sim", "--config", cfg.string(), "--seed", "3", "--out", (dir / "b").string()});
    ASSERT_EQ(a.code, 0) << a.err;
    ASSERT_EQ(b.code, 0) << b.err;
    for (const char* f : {"seed_3/report_off.json", "seed_3/report_on.json", "seed_3/delta.json", "seed_3/summary.csv",
                          "batch_summary.csv", "batch_summary.json"}) {
        ASSERT_TRUE(fs::exists(dir / "a" / f)) << f;
        EXPECT_EQ(slurp(dir / "a" / f), slurp(dir / "b" / f)) << f;
    }
}

TEST_F(CliTest, SteerSimNoSteering)
{
    const auto cfg = write("cfg.json", R"({"schedule": {"steer_steps": 2, "steer_blocks": 2, "total_steps": 3, "total_blocks": 3}})");
    const auto r = invoke({"--config", cfg.string(), "steer-sim", "--no-steering", "--format", "json", "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    EXPECT_EQ(slurp(dir / "seed_0" / "report_off.json"), slurp(dir / "seed_0" / "report_on.json"));
    EXPECT_FALSE(fs::exists(dir / "seed_0" / "summary.csv"));
}

TEST_F(CliTest, SteerSimBatchRowCount)
{
    const auto cfg = write("cfg.json", R"({"schedule": {"steer_steps": 1, "steer_blocks": 1, "total_steps": 1, "total_blocks": 1}})");
    const auto r = invoke({"--config", cfg.string(), "--seeds", "100", "--format", "csv", "--workers", "2", "steer-sim",
                           "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const std::string csv = slurp(dir / "batch_summary.csv");
    EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 101);
}

TEST_F(CliTest, ConfigLayering)
{
    const auto base = write("base.json", R"({"seed": 5, "solver": "active-set", "margin_eps": 0.1})");
    auto cfg = evsteer::cli::load_config(base);
    EXPECT_EQ(cfg.seed, 5u);
    EXPECT_EQ(cfg.solver, evsteer::SolverMode::active_set);
    EXPECT_DOUBLE_EQ(cfg.margin_eps, 0.1);
    EXPECT_EQ(cfg.schedule.max_steps, 20);
    const auto again = evsteer::cli::config_from_json(evsteer::cli::config_to_json(cfg), evsteer::cli::builtin_defaults());
    EXPECT_EQ(evsteer::cli::config_to_json(again), evsteer::cli::config_to_json(cfg));

    const auto bad = write("bad.json", R"({"seeds": 0})");
    EXPECT_THROW(evsteer::cli::load_config(bad).validate(), evsteer::ValidationError);
    EXPECT_EQ(invoke({"--config", bad.string(), "steer-sim"}).code, 1);
    EXPECT_EQ(invoke({"--config", (dir / "missing.json").string(), "steer-sim"}).code, 2);
}

TEST_F(CliTest, AnchorsFromFixture)
{
    const auto prompt = write("prompt.txt",
                              "On a snowy plain, a dog is running forward, then suddenly stops to sniff the ground, then continues running.\n");
    const auto raw = write("raw.txt", "running forward, sniff the ground, continues running");
    const auto r = invoke({"anchors", prompt.string(), "--from-file", raw.string(), "--out", dir.string()});
    ASSERT_EQ(r.code, 0) << r.err;
    const auto doc = nlohmann::json::parse(slurp(dir / "plan.json"));
    ASSERT_EQ(doc.at("events").size(), 3u);
    EXPECT_EQ(doc["events"][1]["anchors"], nlohmann::json::array({"sniff the ground"}));

    const auto body = write("body.json", R"({"choices": [{"message": {"content": "running forward"}}]})");
    const auto plan = write("plan.json", R"({"latent_frames": 8, "events": [
      {"text": "On a snowy plain, a dog is running forward,"},
      {"text": "then suddenly stops to sniff the ground, then continues running."}]})");
    const auto s = invoke({"anchors", prompt.string(), "--from-file", body.string(), "--plan", plan.string()});
    ASSERT_EQ(s.code, 0) << s.err;
    const auto merged = nlohmann::json::parse(s.out);
    EXPECT_EQ(merged["events"][0]["anchors"], nlohmann::json::array({"running forward"}));
    EXPECT_EQ(merged["latent_frames"], 8);
}

TEST_F(CliTest, AnchorsRejectsBadPhrase)
{
    const auto prompt = write("prompt.txt", "a dog is running forward, then sniffs the ground");
    const auto raw = write("raw.txt", "flying high");
    const auto r = invoke({"anchors", prompt.string(), "--from-file", raw.string()});
    EXPECT_EQ(r.code, 1);
    EXPECT_NE(r.err.find("flying high"), std::string::npos);

    const auto empty = write("empty.txt", "");
    EXPECT_EQ(invoke({"anchors", prompt.string(), "--from-file", empty.string()}).code, 1);
}

TEST_F(CliTest, AnchorsTransportFailure)
{
    const auto prompt = write("prompt.txt", "a dog is running forward");
    const auto r = invoke({"anchors", prompt.string(), "--endpoint", "http://127.0.0.1:9/v1/chat/completions"});
    EXPECT_EQ(r.code, 2);
}
