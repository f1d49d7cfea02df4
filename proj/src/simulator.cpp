#include "evsteer/simulator.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <cstdio>
#include <limits>
#include <numbers>
#include <optional>
#include <random>
#include <sstream>
#include <thread>

namespace evsteer {

namespace {

using Rng = std::mt19937_64;

Vector random_unit(Rng& rng, Eigen::Index dim)
{
    std::normal_distribution<double> normal(0.0, 1.0);
    Vector v(dim);
    do {
        for (Eigen::Index i = 0; i < dim; ++i) v[i] = normal(rng);
    } while (v.norm() == 0.0);
    return v.normalized();
}

// Unit cluster centers with pairwise angle >= angle_deg. 90 degrees is built
// exactly by Gram-Schmidt, smaller angles by rejection sampling.
std::vector<Vector> cluster_centers(Rng& rng, int count, Eigen::Index dim, double angle_deg)
{
    std::vector<Vector> centers;
    if (angle_deg >= 90.0) {
        while (static_cast<int>(centers.size()) < count) {
            Vector v = random_unit(rng, dim);
            for (const auto& c : centers) v -= v.dot(c) * c;
            if (v.norm() < 1e-6) continue;
            centers.push_back(v.normalized());
        }
        return centers;
    }
    const double max_cos = std::cos(angle_deg * std::numbers::pi / 180.0);
    constexpr int kMaxTries = 10000;
    for (int i = 0; i < count; ++i) {
        bool placed = false;
        for (int attempt = 0; attempt < kMaxTries && !placed; ++attempt) {
            Vector v = random_unit(rng, dim);
            placed = std::all_of(centers.begin(), centers.end(), [&](const Vector& c) { return v.dot(c) <= max_cos; });
            if (placed) centers.push_back(std::move(v));
        }
        if (!placed) {
            throw ValidationError("generate_scenario: cannot place " + std::to_string(count) + " clusters " +
                                  std::to_string(angle_deg) + " degrees apart in dimension " + std::to_string(dim));
        }
    }
    return centers;
}

// Per-span accumulators for one layer evaluation, already averaged over span rows and heads.
struct LayerStats {
    std::vector<std::vector<double>> mass;  // [span][event]
    std::vector<double> margin;             // [span]
    double max_row_sum_error = 0.0;
};

struct Directions {
    // [head][event] unit vectors
    std::vector<std::vector<Vector>> per_head;
};

LayerStats measure(const AttentionState& state, const SimWorld& world, const Directions& dirs)
{
    const auto events = world.anchors.per_event.size();
    const double scale = 1.0 / std::sqrt(static_cast<double>(state.head_dim()));
    LayerStats out;
    out.mass.assign(world.spans.spans.size(), std::vector<double>(events, 0.0));
    out.margin.assign(world.spans.spans.size(), 0.0);

    for (std::size_t s = 0; s < world.spans.spans.size(); ++s) {
        const auto& span = world.spans.spans[s];
        if (span.empty()) continue;
        const RowRange rows = span_row_indices(span, world.plan.tokens_per_frame);
        const auto first = static_cast<Eigen::Index>(rows.begin);
        const auto count = static_cast<Eigen::Index>(rows.size());
        double margin_sum = 0.0;
        for (std::size_t h = 0; h < state.head_count(); ++h) {
            const Matrix q = state.queries[h].middleRows(first, count);
            const Matrix a = attention(q, state.keys[h], scale);
            const Vector row_sums = a.rowwise().sum();
            out.max_row_sum_error = std::max(out.max_row_sum_error, (row_sums.array() - 1.0).abs().maxCoeff());
            for (std::size_t e = 0; e < events; ++e) {
                for (auto col : world.anchors.per_event[e]) out.mass[s][e] += a.col(static_cast<Eigen::Index>(col)).sum();
            }
            const Vector s_tgt = q * dirs.per_head[h][span.event_id];
            Vector s_max = Vector::Constant(count, -std::numeric_limits<double>::infinity());
            for (std::size_t e = 0; e < events; ++e) {
                if (e == span.event_id) continue;
                s_max = s_max.cwiseMax(q * dirs.per_head[h][e]);
            }
            if (events < 2) s_max.setZero();
            margin_sum += (s_tgt - s_max).sum();
        }
        const double denom = static_cast<double>(count) * static_cast<double>(state.head_count());
        for (auto& m : out.mass[s]) m /= denom;
        out.margin[s] = margin_sum / denom;
    }
    return out;
}

void accumulate(LayerStats& total, const LayerStats& item)
{
    if (total.mass.empty()) {
        total.mass.assign(item.mass.size(), std::vector<double>(item.mass.empty() ? 0 : item.mass[0].size(), 0.0));
        total.margin.assign(item.margin.size(), 0.0);
    }
    for (std::size_t s = 0; s < item.mass.size(); ++s) {
        for (std::size_t e = 0; e < item.mass[s].size(); ++e) total.mass[s][e] += item.mass[s][e];
        total.margin[s] += item.margin[s];
    }
    total.max_row_sum_error = std::max(total.max_row_sum_error, item.max_row_sum_error);
}

std::string fmt_double(double v)
{
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

} // namespace

void SimScenario::validate() const
{
    if (head_count < 1 || head_dim < 1 || latent_frames < 1 || tokens_per_frame < 1 || anchor_tokens_per_event < 1 ||
        filler_tokens < 0) {
        throw ValidationError("scenario: counts must be >= 1 (filler_tokens >= 0)");
    }
    if (event_count < 2) throw ValidationError("scenario: event_count must be >= 2");
    if (!(bias_strength >= 0.0 && bias_strength <= 1.0)) throw ValidationError("scenario: bias_strength must be in [0, 1]");
    if (!(cross_event_angle_deg > 0.0 && cross_event_angle_deg <= 90.0)) {
        throw ValidationError("scenario: cross_event_angle_deg must be in (0, 90]");
    }
    if (!(anchor_noise >= 0.0)) throw ValidationError("scenario: anchor_noise must be >= 0");
    if (cross_event_angle_deg >= 90.0 && event_count > head_dim) {
        throw ValidationError("scenario: cannot fit " + std::to_string(event_count) + " orthogonal clusters in dimension " +
                              std::to_string(head_dim));
    }
}

SimScenario full_scale_preset()
{
    SimScenario s;
    s.head_count = 40;
    s.head_dim = 128;
    s.latent_frames = 21;
    s.tokens_per_frame = 1560;
    s.anchor_tokens_per_event = 4;
    s.filler_tokens = 16;
    return s;
}

SimWorld generate_scenario(const SimScenario& cfg, int blocks)
{
    cfg.validate();
    if (blocks < 1) throw ValidationError("generate_scenario: blocks must be >= 1");

    SimWorld world;
    const int lead = (cfg.filler_tokens + 1) / 2;
    std::size_t pos = 0;
    for (int f = 0; f < lead; ++f) world.tokens.push_back(Token{"filler" + std::to_string(f), pos++});
    for (int e = 0; e < cfg.event_count; ++e) {
        EventSpec ev;
        ev.event_id = static_cast<std::size_t>(e);
        std::string phrase;
        for (int t = 0; t < cfg.anchor_tokens_per_event; ++t) {
            std::string tok = "ev" + std::to_string(e) + "tok" + std::to_string(t);
            world.tokens.push_back(Token{tok, pos++});
            phrase += (t ? " " : "") + tok;
        }
        ev.text = phrase;
        ev.anchor_phrases = {phrase};
        world.plan.events.push_back(std::move(ev));
    }
    for (int f = lead; f < cfg.filler_tokens; ++f) world.tokens.push_back(Token{"filler" + std::to_string(f), pos++});

    world.plan.latent_frames = cfg.latent_frames;
    world.plan.tokens_per_frame = cfg.tokens_per_frame;
    std::string prompt;
    for (const auto& t : world.tokens) prompt += (prompt.empty() ? "" : " ") + t.text;
    world.plan.prompt = prompt;
    world.spans = assign_windows(world.plan.weights(), cfg.latent_frames);
    world.anchors = resolve_anchor_indices(world.plan, world.tokens);

    const Eigen::Index dim = cfg.head_dim;
    const double norm = std::sqrt(static_cast<double>(dim));
    const auto key_count = static_cast<Eigen::Index>(world.tokens.size());
    const Eigen::Index rows = static_cast<Eigen::Index>(cfg.latent_frames) * cfg.tokens_per_frame;

    Rng rng(cfg.seed);
    std::normal_distribution<double> normal(0.0, 1.0);
    for (int b = 0; b < blocks; ++b) {
        AttentionState state;
        state.frame_map = AttentionState::frame_major_map(cfg.latent_frames, cfg.tokens_per_frame);
        for (int h = 0; h < cfg.head_count; ++h) {
            const auto centers = cluster_centers(rng, cfg.event_count, dim, cfg.cross_event_angle_deg);
            Matrix keys(key_count, dim);
            for (Eigen::Index t = 0; t < key_count; ++t) keys.row(t) = norm * random_unit(rng, dim).transpose();
            for (std::size_t e = 0; e < world.anchors.per_event.size(); ++e) {
                for (auto idx : world.anchors.per_event[e]) {
                    Vector v = centers[e];
                    for (Eigen::Index i = 0; i < dim; ++i) v[i] += cfg.anchor_noise * normal(rng) / norm;
                    keys.row(static_cast<Eigen::Index>(idx)) = norm * v.normalized().transpose();
                }
            }
            Matrix queries(rows, dim);
            for (Eigen::Index r = 0; r < rows; ++r) {
                const Vector mix = (1.0 - cfg.bias_strength) * random_unit(rng, dim) + cfg.bias_strength * centers[0];
                const double n = mix.norm();
                if (n > 0.0) {
                    queries.row(r) = (norm / n) * mix.transpose();
                } else {
                    queries.row(r).setZero();
                }
            }
            state.keys.push_back(std::move(keys));
            state.queries.push_back(std::move(queries));
        }
        world.layers.push_back(std::move(state));
    }
    return world;
}

Matrix attention(const Matrix& q, const Matrix& k, double scale)
{
    if (q.cols() != k.cols()) throw DimensionError("attention: query and key widths differ");
    if (!(scale > 0.0)) throw ValidationError("attention: scale must be positive");
    if (k.rows() == 0) throw DimensionError("attention: no keys");
    Matrix logits = scale * (q * k.transpose());
    for (Eigen::Index r = 0; r < logits.rows(); ++r) {
        const double peak = logits.row(r).maxCoeff();
        logits.row(r) = (logits.row(r).array() - peak).exp();
        logits.row(r) /= logits.row(r).sum();
    }
    return logits;
}

AttentionReport run(const SimScenario& scenario, const RunOptions& opts)
{
    opts.schedule.validate();
    const SimWorld world = generate_scenario(scenario, opts.schedule.total_blocks);
    const auto events = world.anchors.per_event.size();

    std::vector<Directions> dirs(world.layers.size());
    for (std::size_t b = 0; b < world.layers.size(); ++b) {
        for (const auto& keys : world.layers[b].keys) {
            std::vector<Vector> per_event;
            for (std::size_t e = 0; e < events; ++e) per_event.push_back(dominant_direction(gather_rows(keys, world.anchors.per_event[e])));
            dirs[b].per_head.push_back(std::move(per_event));
        }
    }

    // Unsteered layers do not change across steps; measure each block once.
    std::vector<std::optional<LayerStats>> plain(world.layers.size());
    SubspaceCache cache;
    LayerStats total;
    AttentionReport report;
    report.seed = scenario.seed;

    for (int step = 0; step < opts.schedule.total_steps; ++step) {
        for (int block = 0; block < opts.schedule.total_blocks; ++block) {
            const auto b = static_cast<std::size_t>(block);
            ++report.evaluations;
            if (opts.steering_enabled && is_active(step, block, opts.schedule)) {
                AttentionState state = world.layers[b];
                const LayerOutcome outcome =
                    apply_layer(state, world.plan, world.spans, world.anchors, true, opts.steering, &cache, b);
                report.steering_calls += static_cast<long long>(outcome.steered_pairs);
                accumulate(total, measure(state, world, dirs[b]));
                continue;
            }
            if (!plain[b]) plain[b] = measure(world.layers[b], world, dirs[b]);
            accumulate(total, *plain[b]);
        }
    }

    const double n = static_cast<double>(report.evaluations);
    report.max_row_sum_error = total.max_row_sum_error;
    for (std::size_t s = 0; s < world.spans.spans.size(); ++s) {
        const auto& span = world.spans.spans[s];
        SpanStats st;
        st.event_id = span.event_id;
        st.start = span.start;
        st.end = span.end;
        st.event_mass.resize(events);
        for (std::size_t e = 0; e < events; ++e) {
            st.event_mass[e] = total.mass[s][e] / n;
            if (e == span.event_id) {
                st.target_mass = st.event_mass[e];
            } else {
                st.leakage += st.event_mass[e];
            }
        }
        st.margin = total.margin[s] / n;
        report.spans.push_back(std::move(st));
    }
    return report;
}

DeltaReport compare(const AttentionReport& off, const AttentionReport& on)
{
    if (off.spans.size() != on.spans.size()) throw DimensionError("compare: reports have different span counts");
    DeltaReport out;
    out.seed = on.seed;
    bool up = true;
    bool down = true;
    bool any_later = false;
    for (std::size_t s = 0; s < off.spans.size(); ++s) {
        const auto& a = off.spans[s];
        const auto& b = on.spans[s];
        if (a.event_id != b.event_id || a.start != b.start || a.end != b.end) {
            throw DimensionError("compare: span layouts differ");
        }
        out.spans.push_back(SpanDelta{a.event_id, b.target_mass - a.target_mass, b.leakage - a.leakage, b.margin - a.margin});
        if (s == 0 || a.start == a.end) continue;
        any_later = true;
        up = up && b.target_mass > a.target_mass;
        down = down && b.leakage < a.leakage;
    }
    out.target_up_all_later_spans = any_later && up;
    out.leakage_down_all_later_spans = any_later && down;
    return out;
}

std::vector<SeedResult> run_batch(const SimScenario& base, const RunOptions& opts, std::uint64_t first_seed,
                                  std::size_t count, unsigned workers)
{
    std::vector<SeedResult> results(count);
    auto one = [&](std::size_t i) {
        SimScenario sc = base;
        sc.seed = first_seed + i;
        RunOptions off = opts;
        off.steering_enabled = false;
        results[i].off = run(sc, off);
        results[i].on = run(sc, opts);
        results[i].delta = compare(results[i].off, results[i].on);
    };

    workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(std::max<std::size_t>(count, 1))));
    if (workers == 1) {
        for (std::size_t i = 0; i < count; ++i) one(i);
        return results;
    }
    std::atomic<std::size_t> next{0};
    std::vector<std::exception_ptr> errors(workers);
    {
        std::vector<std::jthread> pool;
        for (unsigned w = 0; w < workers; ++w) {
            pool.emplace_back([&, w] {
                try {
                    for (std::size_t i = next++; i < count; i = next++) one(i);
                } catch (...) {
                    errors[w] = std::current_exception();
                }
            });
        }
    }
    for (auto& e : errors) {
        if (e) std::rethrow_exception(e);
    }
    return results;
}

BatchSummary summarize(const std::vector<SeedResult>& results)
{
    BatchSummary s;
    s.seeds = results.size();
    for (const auto& r : results) {
        s.wins += r.delta.win() ? 1 : 0;
        s.target_up += r.delta.target_up_all_later_spans ? 1 : 0;
        s.leakage_down += r.delta.leakage_down_all_later_spans ? 1 : 0;
    }
    return s;
}

nlohmann::json to_json(const AttentionReport& report)
{
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& s : report.spans) {
        spans.push_back({{"event_id", s.event_id},
                         {"start", s.start},
                         {"end", s.end},
                         {"event_mass", s.event_mass},
                         {"target_mass", s.target_mass},
                         {"leakage", s.leakage},
                         {"margin", s.margin}});
    }
    return {{"schema_version", report.schema_version},
            {"seed", report.seed},
            {"evaluations", report.evaluations},
            {"steering_calls", report.steering_calls},
            {"max_row_sum_error", report.max_row_sum_error},
            {"spans", spans}};
}

nlohmann::json to_json(const DeltaReport& delta)
{
    nlohmann::json spans = nlohmann::json::array();
    for (const auto& s : delta.spans) {
        spans.push_back({{"event_id", s.event_id},
                         {"target_mass", s.target_mass},
                         {"leakage", s.leakage},
                         {"margin", s.margin}});
    }
    return {{"schema_version", delta.schema_version},
            {"seed", delta.seed},
            {"spans", spans},
            {"target_up_all_later_spans", delta.target_up_all_later_spans},
            {"leakage_down_all_later_spans", delta.leakage_down_all_later_spans},
            {"win", delta.win()}};
}

nlohmann::json to_json(const BatchSummary& summary)
{
    return {{"schema_version", kReportSchemaVersion},
            {"seeds", summary.seeds},
            {"wins", summary.wins},
            {"target_up", summary.target_up},
            {"leakage_down", summary.leakage_down},
            {"win_rate", summary.win_rate()}};
}

nlohmann::json scenario_to_json(const SimScenario& s)
{
    return {{"head_count", s.head_count},
            {"head_dim", s.head_dim},
            {"latent_frames", s.latent_frames},
            {"tokens_per_frame", s.tokens_per_frame},
            {"anchor_tokens_per_event", s.anchor_tokens_per_event},
            {"filler_tokens", s.filler_tokens},
            {"event_count", s.event_count},
            {"bias_strength", s.bias_strength},
            {"cross_event_angle_deg", s.cross_event_angle_deg},
            {"anchor_noise", s.anchor_noise},
            {"seed", s.seed}};
}

SimScenario scenario_from_json(const nlohmann::json& doc, SimScenario s)
{
    if (!doc.is_object()) throw ValidationError("scenario: expected a JSON object");
    try {
        s.head_count = doc.value("head_count", s.head_count);
        s.head_dim = doc.value("head_dim", s.head_dim);
        s.latent_frames = doc.value("latent_frames", s.latent_frames);
        s.tokens_per_frame = doc.value("tokens_per_frame", s.tokens_per_frame);
        s.anchor_tokens_per_event = doc.value("anchor_tokens_per_event", s.anchor_tokens_per_event);
        s.filler_tokens = doc.value("filler_tokens", s.filler_tokens);
        s.event_count = doc.value("event_count", s.event_count);
        s.bias_strength = doc.value("bias_strength", s.bias_strength);
        s.cross_event_angle_deg = doc.value("cross_event_angle_deg", s.cross_event_angle_deg);
        s.anchor_noise = doc.value("anchor_noise", s.anchor_noise);
        s.seed = doc.value("seed", s.seed);
    } catch (const nlohmann::json::exception& ex) {
        throw ValidationError(std::string("scenario: ") + ex.what());
    }
    return s;
}

std::string span_summary_csv(const AttentionReport& off, const AttentionReport& on)
{
    if (off.spans.size() != on.spans.size()) throw DimensionError("span_summary_csv: reports have different span counts");
    std::ostringstream os;
    os << "span,event,mass_off,mass_on,margin_off,margin_on,leakage_off,leakage_on\n";
    for (std::size_t s = 0; s < off.spans.size(); ++s) {
        const auto& a = off.spans[s];
        const auto& b = on.spans[s];
        os << s << ',' << a.event_id << ',' << fmt_double(a.target_mass) << ',' << fmt_double(b.target_mass) << ','
           << fmt_double(a.margin) << ',' << fmt_double(b.margin) << ',' << fmt_double(a.leakage) << ','
           << fmt_double(b.leakage) << '\n';
    }
    return os.str();
}

std::string batch_summary_csv(const std::vector<SeedResult>& results)
{
    std::ostringstream os;
    os << "seed,win,target_up,leakage_down,mean_target_delta,mean_leakage_delta,mean_margin_delta\n";
    for (const auto& r : results) {
        double t = 0.0;
        double l = 0.0;
        double m = 0.0;
        std::size_t n = 0;
        for (std::size_t s = 1; s < r.delta.spans.size(); ++s) {
            t += r.delta.spans[s].target_mass;
            l += r.delta.spans[s].leakage;
            m += r.delta.spans[s].margin;
            ++n;
        }
        const double denom = n ? static_cast<double>(n) : 1.0;
        os << r.delta.seed << ',' << (r.delta.win() ? 1 : 0) << ',' << (r.delta.target_up_all_later_spans ? 1 : 0) << ','
           << (r.delta.leakage_down_all_later_spans ? 1 : 0) << ',' << fmt_double(t / denom) << ','
           << fmt_double(l / denom) << ',' << fmt_double(m / denom) << '\n';
    }
    return os.str();
}

} // namespace evsteer
