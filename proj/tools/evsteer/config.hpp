#pragma once

#include "evsteer/schedule.hpp"
#include "evsteer/simulator.hpp"
#include "evsteer/strength_solver.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <string>

namespace evsteer::cli {

struct AnchorServiceConfig {
    std::string endpoint = "https://api.openai.com/v1/chat/completions";
    std::string model = "gpt-4o";
    std::string auth_env = "ANCHOR_API_KEY";
    std::string audit_file;  // empty: no audit log
    int retries = 1;
};

struct RunConfig {
    std::filesystem::path plan_path;
    SteeringSchedule schedule = SteeringSchedule::standard();
    SolverMode solver = SolverMode::closed_form;
    double margin_eps = kDefaultMarginEps;
    double ridge_scale = 1e-4;
    SimScenario scenario;
    std::uint64_t seed = 0;
    std::size_t seeds = 1;
    unsigned workers = 1;
    std::filesystem::path output_dir = "out";
    std::string format = "both";  // json | csv | both
    AnchorServiceConfig anchors;

    void validate() const;
};

RunConfig builtin_defaults();

// Overlays the fields present in `doc` on `base`. Relative plan paths are
// resolved against `base_dir`.
RunConfig config_from_json(const nlohmann::json& doc, RunConfig base, const std::filesystem::path& base_dir = {});
RunConfig load_config(const std::filesystem::path& path, RunConfig base = builtin_defaults());
nlohmann::json config_to_json(const RunConfig& cfg);

} // namespace evsteer::cli
