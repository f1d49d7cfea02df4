#pragma once

#include "evsteer/event_model.hpp"
#include "evsteer/query_steering.hpp"
#include "evsteer/schedule.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <string>
#include <vector>

namespace evsteer {

inline constexpr int kReportSchemaVersion = 1;

// Toy multi-head cross-attention stack with planted event structure. Queries
// lean toward event 0 with strength `bias_strength`; event key clusters are
// separated by at least `cross_event_angle_deg`. Query and key vectors have
// norm sqrt(head_dim).
struct SimScenario {
    int head_count = 4;
    int head_dim = 32;
    int latent_frames = 8;
    int tokens_per_frame = 4;
    int anchor_tokens_per_event = 3;
    int filler_tokens = 4;
    int event_count = 3;
    double bias_strength = 0.8;
    double cross_event_angle_deg = 90.0;
    double anchor_noise = 0.1;  // relative spread of anchor keys around their cluster center
    std::uint64_t seed = 0;

    void validate() const;
};

// Full-scale shape (40 heads, 40 blocks, 81 pixel frames -> 21 latent frames).
// Documented preset only; far too slow for the test suite.
SimScenario full_scale_preset();

struct SimWorld {
    EventPlan plan;
    SpanAssignment spans;
    AnchorIndexSet anchors;
    std::vector<Token> tokens;
    std::vector<AttentionState> layers;  // one per transformer block
};

SimWorld generate_scenario(const SimScenario& cfg, int blocks = 1);

// Row-wise softmax(scale * Q K^T).
Matrix attention(const Matrix& q, const Matrix& k, double scale);

struct SpanStats {
    std::size_t event_id = 0;
    int start = 0;
    int end = 0;
    std::vector<double> event_mass;  // mean attention mass per event's anchor columns
    double target_mass = 0.0;
    double leakage = 0.0;  // mass on the other events' anchors
    double margin = 0.0;   // mean S_tgt - S_oth^max over rows and heads
};

struct AttentionReport {
    int schema_version = kReportSchemaVersion;
    std::uint64_t seed = 0;
    int evaluations = 0;  // steps x blocks
    long long steering_calls = 0;
    double max_row_sum_error = 0.0;
    std::vector<SpanStats> spans;
};

struct RunOptions {
    bool steering_enabled = true;
    SteeringSchedule schedule = SteeringSchedule::standard();
    SteeringConfig steering;
};

AttentionReport run(const SimScenario& scenario, const RunOptions& opts);

struct SpanDelta {
    std::size_t event_id = 0;
    double target_mass = 0.0;
    double leakage = 0.0;
    double margin = 0.0;
};

struct DeltaReport {
    int schema_version = kReportSchemaVersion;
    std::uint64_t seed = 0;
    std::vector<SpanDelta> spans;
    bool target_up_all_later_spans = false;
    bool leakage_down_all_later_spans = false;

    [[nodiscard]] bool win() const { return target_up_all_later_spans && leakage_down_all_later_spans; }
};

DeltaReport compare(const AttentionReport& off, const AttentionReport& on);

struct SeedResult {
    AttentionReport off;
    AttentionReport on;
    DeltaReport delta;
};

// Paired off/on runs for seeds first_seed .. first_seed + count - 1. Seeds are
// independent and may run on `workers` threads; output order is by seed.
std::vector<SeedResult> run_batch(const SimScenario& base, const RunOptions& opts, std::uint64_t first_seed,
                                  std::size_t count, unsigned workers = 1);

struct BatchSummary {
    std::size_t seeds = 0;
    std::size_t wins = 0;
    std::size_t target_up = 0;
    std::size_t leakage_down = 0;

    [[nodiscard]] double win_rate() const { return seeds == 0 ? 0.0 : static_cast<double>(wins) / static_cast<double>(seeds); }
};

BatchSummary summarize(const std::vector<SeedResult>& results);

nlohmann::json to_json(const AttentionReport& report);
nlohmann::json to_json(const DeltaReport& delta);
nlohmann::json to_json(const BatchSummary& summary);
nlohmann::json scenario_to_json(const SimScenario& scenario);
SimScenario scenario_from_json(const nlohmann::json& doc, SimScenario base = {});

// Header: span,event,mass_off,mass_on,margin_off,margin_on,leakage_off,leakage_on
std::string span_summary_csv(const AttentionReport& off, const AttentionReport& on);
// One row per seed.
std::string batch_summary_csv(const std::vector<SeedResult>& results);

} // namespace evsteer
