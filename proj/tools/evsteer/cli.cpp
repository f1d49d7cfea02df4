#include "cli.hpp"

#include "config.hpp"

#include "evsteer/anchor_service.hpp"
#include "evsteer/event_model.hpp"
#include "evsteer/simulator.hpp"
#include "evsteer/strength_solver.hpp"

#include <CLI11.hpp>

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>

namespace evsteer::cli {

namespace {

struct Overrides {
    std::optional<std::string> config;
    std::optional<std::uint64_t> seed;
    std::optional<std::size_t> seeds;
    std::optional<std::string> solver;
    std::optional<int> steer_steps;
    std::optional<int> steer_blocks;
    std::optional<std::string> out;
    std::optional<std::string> format;
    std::optional<unsigned> workers;
    bool no_steering = false;
};

nlohmann::json read_json(const std::filesystem::path& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::parse_error& ex) {
        throw ValidationError("malformed JSON in " + path.string() + ": " + ex.what());
    }
}

std::string read_text(const std::filesystem::path& path)
{
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

void write_text(const std::filesystem::path& path, const std::string& text)
{
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot write " + path.string());
    out << text;
    if (!out) throw IoError("write failed: " + path.string());
}

RunConfig resolve_config(const Overrides& ov, const std::filesystem::path& default_config)
{
    RunConfig cfg = builtin_defaults();
    if (!default_config.empty() && std::filesystem::exists(default_config)) cfg = load_config(default_config, cfg);
    if (ov.config) cfg = load_config(*ov.config, cfg);
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.seeds) cfg.seeds = *ov.seeds;
    if (ov.solver) cfg.solver = solver_mode_from_string(*ov.solver);
    if (ov.steer_steps) cfg.schedule.max_steps = *ov.steer_steps;
    if (ov.steer_blocks) cfg.schedule.max_blocks = *ov.steer_blocks;
    if (ov.out) cfg.output_dir = *ov.out;
    if (ov.format) cfg.format = *ov.format;
    if (ov.workers) cfg.workers = *ov.workers;
    cfg.validate();
    return cfg;
}

SolverInstance instance_from_document(const nlohmann::json& doc, double default_eps)
{
    if (!doc.is_object()) throw ValidationError("instance: expected a JSON object");
    try {
        const double eps = doc.value("margin_eps", default_eps);
        if (doc.contains("q_star")) {
            const auto rows = doc.at("q_star").get<std::vector<std::vector<double>>>();
            const auto k_tgt = doc.at("k_tgt").get<std::vector<double>>();
            const auto k_oth = doc.at("k_oth").get<std::vector<std::vector<double>>>();
            const auto dim = static_cast<Eigen::Index>(k_tgt.size());
            Matrix q(static_cast<Eigen::Index>(rows.size()), dim);
            for (std::size_t r = 0; r < rows.size(); ++r) {
                if (static_cast<Eigen::Index>(rows[r].size()) != dim) throw DimensionError("instance: q_star row width != len(k_tgt)");
                for (Eigen::Index c = 0; c < dim; ++c) q(static_cast<Eigen::Index>(r), c) = rows[r][static_cast<std::size_t>(c)];
            }
            DominantDirections dirs;
            dirs.k_tgt = Eigen::Map<const Vector>(k_tgt.data(), dim);
            dirs.k_oth.resize(dim, static_cast<Eigen::Index>(k_oth.size()));
            for (std::size_t j = 0; j < k_oth.size(); ++j) {
                if (static_cast<Eigen::Index>(k_oth[j].size()) != dim) throw DimensionError("instance: k_oth vector width != len(k_tgt)");
                dirs.k_oth.col(static_cast<Eigen::Index>(j)) = Eigen::Map<const Vector>(k_oth[j].data(), dim);
            }
            auto inst = build_instance(q, dirs, eps);
            if (!inst) throw ValidationError("instance: q_star has no rows");
            return *inst;
        }

        const auto s_tgt = doc.at("s_tgt").get<std::vector<double>>();
        const auto rows = static_cast<Eigen::Index>(s_tgt.size());
        Matrix s_oth;
        if (doc.contains("s_oth")) {
            const auto m = doc.at("s_oth").get<std::vector<std::vector<double>>>();
            if (static_cast<Eigen::Index>(m.size()) != rows) throw DimensionError("instance: s_oth must have one row per s_tgt entry");
            const auto cols = m.empty() ? Eigen::Index{0} : static_cast<Eigen::Index>(m.front().size());
            s_oth.resize(rows, cols);
            for (Eigen::Index r = 0; r < rows; ++r) {
                if (static_cast<Eigen::Index>(m[static_cast<std::size_t>(r)].size()) != cols) throw DimensionError("instance: ragged s_oth");
                for (Eigen::Index c = 0; c < cols; ++c) s_oth(r, c) = m[static_cast<std::size_t>(r)][static_cast<std::size_t>(c)];
            }
        } else {
            const auto mx = doc.at("s_oth_max").get<std::vector<double>>();
            if (static_cast<Eigen::Index>(mx.size()) != rows) throw DimensionError("instance: s_oth_max length != s_tgt length");
            s_oth = Eigen::Map<const Vector>(mx.data(), rows);
        }
        if (rows == 0) throw ValidationError("instance: empty span");
        return instance_from_scores(Eigen::Map<const Vector>(s_tgt.data(), rows), std::move(s_oth), eps);
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError(std::string("instance: ") + ex.what());
    }
}

nlohmann::json strengths_to_json(const SteeringStrengths& s)
{
    const auto& d = s.diagnostics;
    return {{"schema_version", 1},
            {"alpha", s.alpha},
            {"beta", s.beta},
            {"mode", std::string(to_string(s.mode))},
            {"diagnostics",
             {{"objective_at_zero", d.objective_at_zero},
              {"objective_at_solution", d.objective_at_solution},
              {"gradient_norm", d.gradient_norm},
              {"alpha_clamped", d.alpha_clamped},
              {"beta_clamped", d.beta_clamped},
              {"zero_deficit", d.zero_deficit},
              {"near_singular", d.near_singular},
              {"safeguard_fired", d.safeguard_fired},
              {"iterations", d.iterations}}}};
}

int cmd_plan(const std::string& plan_path, const Overrides& ov, std::ostream& out, std::ostream& err)
{
    const EventPlan plan = load_plan(plan_path);
    const PlanReport report = validate_plan(plan);
    for (const auto& w : report.warnings) err << "warning: " << w << '\n';
    if (!report.usable()) {
        for (const auto& v : report.violations) err << "violation: " << v << '\n';
        return kValidationError;
    }
    const SpanAssignment spans = assign_windows(plan.weights(), plan.latent_frames);
    out << format_spans(spans) << '\n';
    if (ov.out) {
        const nlohmann::json doc = {{"schema_version", 1},
                                    {"latent_frames", plan.latent_frames},
                                    {"tokens_per_frame", plan.tokens_per_frame},
                                    {"spans", spans_to_json(spans)}};
        write_text(std::filesystem::path(*ov.out) / "spans.json", doc.dump(2) + '\n');
    }
    return kOk;
}

int cmd_solve(const std::string& instance_path, const RunConfig& cfg, std::ostream& out)
{
    const SolverInstance inst = instance_from_document(read_json(instance_path), cfg.margin_eps);
    out << strengths_to_json(solve(inst, cfg.solver)).dump(2) << '\n';
    return kOk;
}

int cmd_steer_sim(const RunConfig& cfg, bool no_steering, std::ostream& out)
{
    RunOptions opts;
    opts.schedule = cfg.schedule;
    opts.steering.solver = cfg.solver;
    opts.steering.margin_eps = cfg.margin_eps;
    opts.steering.ridge_scale = cfg.ridge_scale;
    opts.steering_enabled = !no_steering;

    const auto results = run_batch(cfg.scenario, opts, cfg.seed, cfg.seeds, cfg.workers);
    const bool json = cfg.format == "json" || cfg.format == "both";
    const bool csv = cfg.format == "csv" || cfg.format == "both";
    for (const auto& r : results) {
        const auto dir = cfg.output_dir / ("seed_" + std::to_string(r.delta.seed));
        if (json) {
            write_text(dir / "report_off.json", to_json(r.off).dump(2) + '\n');
            write_text(dir / "report_on.json", to_json(r.on).dump(2) + '\n');
            write_text(dir / "delta.json", to_json(r.delta).dump(2) + '\n');
        }
        if (csv) write_text(dir / "summary.csv", span_summary_csv(r.off, r.on));
    }
    const BatchSummary summary = summarize(results);
    if (json) write_text(cfg.output_dir / "batch_summary.json", to_json(summary).dump(2) + '\n');
    if (csv) write_text(cfg.output_dir / "batch_summary.csv", batch_summary_csv(results));
    out << "seeds: " << summary.seeds << "  wins: " << summary.wins << "  target_up: " << summary.target_up
        << "  leakage_down: " << summary.leakage_down << '\n';
    return kOk;
}

struct AnchorArgs {
    std::string prompt_path;
    std::string endpoint;
    std::string from_file;
    std::string plan;
    std::string model;
    std::string auth_env;
    std::string audit;
};

int cmd_anchors(const AnchorArgs& args, const RunConfig& cfg, const Overrides& ov, std::ostream& out, std::ostream& err)
{
    std::string prompt = read_text(args.prompt_path);
    while (!prompt.empty() && (prompt.back() == '\n' || prompt.back() == '\r')) prompt.pop_back();

    std::optional<EventPlan> plan;
    if (!args.plan.empty()) plan = load_plan(args.plan);

    AnchorRequest req;
    req.prompt = prompt;
    req.endpoint = args.endpoint.empty() ? cfg.anchors.endpoint : args.endpoint;
    req.model = args.model.empty() ? cfg.anchors.model : args.model;
    req.auth_env = args.auth_env.empty() ? cfg.anchors.auth_env : args.auth_env;
    req.retries = cfg.anchors.retries;
    const std::string audit = args.audit.empty() ? cfg.anchors.audit_file : args.audit;
    if (!audit.empty()) req.audit_file = audit;
    if (plan) {
        for (const auto& ev : plan->events) req.event_texts.push_back(ev.text);
    }

    AnchorResponse response;
    if (!args.from_file.empty()) {
        const std::string fixture = read_text(args.from_file);
        std::optional<FixtureTransport> transport;
        try {
            const auto doc = nlohmann::json::parse(fixture);
            if (doc.is_object()) transport.emplace(HttpResponse{200, fixture});
        } catch (const nlohmann::json::parse_error&) {
        }
        if (!transport) transport.emplace(FixtureTransport::from_content(fixture));
        response = extract_anchors(req, *transport);
    } else {
        HttpTransport transport;
        response = extract_anchors(req, transport);
    }
    for (const auto& w : response.warnings) err << "warning: " << w << '\n';

    if (!plan) {
        plan.emplace();
        plan->prompt = prompt;
        plan->latent_frames = cfg.scenario.latent_frames;
        plan->tokens_per_frame = cfg.scenario.tokens_per_frame;
        const auto starts = segment_prompt(prompt);
        for (std::size_t i = 0; i < starts.size(); ++i) {
            const auto stop = i + 1 < starts.size() ? starts[i + 1] : prompt.size();
            EventSpec ev;
            ev.event_id = i;
            ev.text = prompt.substr(starts[i], stop - starts[i]);
            while (!ev.text.empty() && (ev.text.back() == ' ' || ev.text.back() == ',')) ev.text.pop_back();
            plan->events.push_back(std::move(ev));
        }
    } else if (plan->prompt.empty()) {
        plan->prompt = prompt;
    }
    if (response.per_event.size() != plan->events.size()) {
        err << "error: response grouped into " << response.per_event.size() << " events, plan has "
            << plan->events.size() << '\n';
        return kValidationError;
    }
    for (std::size_t i = 0; i < plan->events.size(); ++i) plan->events[i].anchor_phrases = response.per_event[i];

    const std::string doc = plan_to_json(*plan).dump(2) + '\n';
    if (ov.out) {
        write_text(std::filesystem::path(*ov.out) / "plan.json", doc);
    } else {
        out << doc;
    }
    return kOk;
}

} // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err,
        const std::filesystem::path& default_config)
{
    CLI::App app{"Event-aligned query steering toolkit"};
    app.require_subcommand(1);

    Overrides ov;
    app.add_option("--config", ov.config, "JSON config file (overrides the built-in defaults)");
    app.add_option("--seed", ov.seed, "First seed");
    app.add_option("--seeds", ov.seeds, "Number of consecutive seeds");
    app.add_option("--solver", ov.solver, "Strength solver")->check(CLI::IsMember({"paper", "closed-form", "active-set"}));
    app.add_option("--steer-steps", ov.steer_steps, "Steer while step < N");
    app.add_option("--steer-blocks", ov.steer_blocks, "Steer while block < N");
    app.add_flag("--no-steering", ov.no_steering, "Disable steering in the 'on' run");
    app.add_option("--out", ov.out, "Output directory");
    app.add_option("--format", ov.format, "Report format")->check(CLI::IsMember({"json", "csv", "both"}));
    app.add_option("--workers", ov.workers, "Worker threads for seed sweeps");

    std::string plan_path;
    auto* plan_cmd = app.add_subcommand("plan", "Assign latent-frame windows to the events of a plan");
    plan_cmd->add_option("plan", plan_path, "Plan JSON")->required();
    plan_cmd->fallthrough();

    std::string instance_path;
    auto* solve_cmd = app.add_subcommand("solve", "Solve steering strengths for one instance");
    solve_cmd->add_option("instance", instance_path, "Instance JSON")->required();
    solve_cmd->fallthrough();

    auto* sim_cmd = app.add_subcommand("steer-sim", "Paired steering off/on simulation");
    sim_cmd->fallthrough();

    AnchorArgs anchor_args;
    auto* anchors_cmd = app.add_subcommand("anchors", "Extract anchor phrases for a prompt");
    anchors_cmd->add_option("prompt", anchor_args.prompt_path, "Prompt text file")->required();
    auto* endpoint_opt = anchors_cmd->add_option("--endpoint", anchor_args.endpoint, "Chat-completion endpoint URL");
    anchors_cmd->add_option("--from-file", anchor_args.from_file, "Offline response fixture")->excludes(endpoint_opt);
    anchors_cmd->add_option("--plan", anchor_args.plan, "Plan JSON whose events receive the anchors");
    anchors_cmd->add_option("--model", anchor_args.model, "Model name");
    anchors_cmd->add_option("--auth-env", anchor_args.auth_env, "Environment variable holding the API token");
    anchors_cmd->add_option("--audit", anchor_args.audit, "Append request/response pairs to this file");
    anchors_cmd->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kOk : kValidationError;
    }

    try {
        if (*plan_cmd) return cmd_plan(plan_path, ov, out, err);
        const RunConfig cfg = resolve_config(ov, default_config);
        if (*solve_cmd) return cmd_solve(instance_path, cfg, out);
        if (*sim_cmd) return cmd_steer_sim(cfg, ov.no_steering, out);
        if (*anchors_cmd) return cmd_anchors(anchor_args, cfg, ov, out, err);
    } catch (const IoError& e) {
        err << "error: " << e.what() << '\n';
        return kIoError;
    } catch (const std::filesystem::filesystem_error& e) {
        err << "error: " << e.what() << '\n';
        return kIoError;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << '\n';
        return kValidationError;
    }
    return kValidationError;
}

} // namespace evsteer::cli
