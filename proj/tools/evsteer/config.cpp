#include "config.hpp"

#include <fstream>

namespace evsteer::cli {

void RunConfig::validate() const
{
    schedule.validate();
    scenario.validate();
    if (seeds < 1) throw ValidationError("config: seeds must be >= 1");
    if (format != "json" && format != "csv" && format != "both") {
        throw ValidationError("config: format must be json, csv or both");
    }
    if (!(margin_eps >= 0.0)) throw ValidationError("config: margin_eps must be >= 0");
    if (!(ridge_scale > 0.0)) throw ValidationError("config: ridge_scale must be > 0");
    if (!plan_path.empty() && !std::filesystem::exists(plan_path)) {
        throw IoError("config: plan file not found: " + plan_path.string());
    }
}

RunConfig builtin_defaults()
{
    return RunConfig{};
}

RunConfig config_from_json(const nlohmann::json& doc, RunConfig cfg, const std::filesystem::path& base_dir)
{
    if (!doc.is_object()) throw ValidationError("config: expected a JSON object");
    try {
        if (doc.contains("plan")) {
            std::filesystem::path p = doc.at("plan").get<std::string>();
            cfg.plan_path = p.is_relative() && !base_dir.empty() ? base_dir / p : p;
        }
        if (doc.contains("schedule")) {
            const auto& s = doc.at("schedule");
            cfg.schedule.max_steps = s.value("steer_steps", cfg.schedule.max_steps);
            cfg.schedule.max_blocks = s.value("steer_blocks", cfg.schedule.max_blocks);
            cfg.schedule.total_steps = s.value("total_steps", cfg.schedule.total_steps);
            cfg.schedule.total_blocks = s.value("total_blocks", cfg.schedule.total_blocks);
        }
        if (doc.contains("solver")) cfg.solver = solver_mode_from_string(doc.at("solver").get<std::string>());
        cfg.margin_eps = doc.value("margin_eps", cfg.margin_eps);
        cfg.ridge_scale = doc.value("ridge_scale", cfg.ridge_scale);
        if (doc.contains("scenario")) cfg.scenario = scenario_from_json(doc.at("scenario"), cfg.scenario);
        cfg.seed = doc.value("seed", cfg.seed);
        cfg.seeds = doc.value("seeds", cfg.seeds);
        cfg.workers = doc.value("workers", cfg.workers);
        if (doc.contains("output_dir")) cfg.output_dir = doc.at("output_dir").get<std::string>();
        cfg.format = doc.value("format", cfg.format);
        if (doc.contains("anchor_service")) {
            const auto& a = doc.at("anchor_service");
            cfg.anchors.endpoint = a.value("endpoint", cfg.anchors.endpoint);
            cfg.anchors.model = a.value("model", cfg.anchors.model);
            cfg.anchors.auth_env = a.value("auth_env", cfg.anchors.auth_env);
            cfg.anchors.audit_file = a.value("audit_file", cfg.anchors.audit_file);
            cfg.anchors.retries = a.value("retries", cfg.anchors.retries);
        }
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError(std::string("config: ") + ex.what());
    }
    return cfg;
}

RunConfig load_config(const std::filesystem::path& path, RunConfig base)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config file: " + path.string());
    nlohmann::json doc;
    try {
        doc = nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& ex) {
        throw ValidationError("config: malformed JSON in " + path.string() + ": " + ex.what());
    }
    return config_from_json(doc, std::move(base), path.parent_path());
}

nlohmann::json config_to_json(const RunConfig& cfg)
{
    nlohmann::json doc = {
        {"schema_version", 1},
        {"schedule",
         {{"steer_steps", cfg.schedule.max_steps},
          {"steer_blocks", cfg.schedule.max_blocks},
          {"total_steps", cfg.schedule.total_steps},
          {"total_blocks", cfg.schedule.total_blocks}}},
        {"solver", std::string(to_string(cfg.solver))},
        {"margin_eps", cfg.margin_eps},
        {"ridge_scale", cfg.ridge_scale},
        {"scenario", scenario_to_json(cfg.scenario)},
        {"seed", cfg.seed},
        {"seeds", cfg.seeds},
        {"workers", cfg.workers},
        {"output_dir", cfg.output_dir.string()},
        {"format", cfg.format},
        {"anchor_service",
         {{"endpoint", cfg.anchors.endpoint},
          {"model", cfg.anchors.model},
          {"auth_env", cfg.anchors.auth_env},
          {"audit_file", cfg.anchors.audit_file},
          {"retries", cfg.anchors.retries}}}};
    if (!cfg.plan_path.empty()) doc["plan"] = cfg.plan_path.string();
    return doc;
}

} // namespace evsteer::cli
