#pragma once

#include "evsteer/common.hpp"
#include "evsteer/event_model.hpp"
#include "evsteer/strength_solver.hpp"
#include "evsteer/subspace.hpp"

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <tuple>
#include <vector>

namespace evsteer {

// One cross-attention layer: per-head video queries (S x D_h) and text keys
// (L_k x D_h). frame_map[row] is the latent frame of query row `row`.
struct AttentionState {
    std::vector<Matrix> queries;
    std::vector<Matrix> keys;
    std::vector<int> frame_map;

    [[nodiscard]] std::size_t head_count() const { return queries.size(); }
    [[nodiscard]] Eigen::Index head_dim() const { return queries.empty() ? 0 : queries.front().cols(); }
    [[nodiscard]] Eigen::Index token_count() const { return queries.empty() ? 0 : queries.front().rows(); }
    [[nodiscard]] Eigen::Index key_count() const { return keys.empty() ? 0 : keys.front().rows(); }

    void validate() const;

    // Row r belongs to frame r / tokens_per_frame.
    static std::vector<int> frame_major_map(int latent_frames, int tokens_per_frame);
};

struct SteeringConfig {
    SolverMode solver = SolverMode::closed_form;
    double margin_eps = kDefaultMarginEps;
    // Ridge = ridge_scale * mean squared key norm, unless absolute_ridge is set.
    double ridge_scale = 1e-4;
    std::optional<double> absolute_ridge;
    // Bypass the subspace cache and rebuild projectors on every call.
    bool rebuild_subspaces = false;
    // Skip the solver and use these strengths for every span and head.
    std::optional<Vector2> forced_strengths;
};

// Projectors and dominant directions for one (layer, head, target event).
struct HeadSubspaces {
    RidgeProjector p_tgt;
    RidgeProjector p_oth;  // zero matrix when there are no competitors
    DominantDirections dirs;
    bool has_competitors = false;
};

struct SteeringContext {
    std::size_t event_id = 0;
    RowRange rows;
    std::vector<SteeringStrengths> strengths;  // per head
};

struct LayerOutcome {
    std::vector<SteeringContext> contexts;
    std::vector<std::string> warnings;
    std::size_t steered_pairs = 0;  // (span, head) pairs that went through steer_queries
};

// Keys are step-invariant, so subspaces can be reused across denoising steps
// for the same layer. Not thread-safe; use one cache per worker.
class SubspaceCache {
public:
    const HeadSubspaces* find(std::size_t layer, std::size_t head, std::size_t event) const;
    const HeadSubspaces& insert(std::size_t layer, std::size_t head, std::size_t event, HeadSubspaces value);
    [[nodiscard]] std::size_t size() const { return entries_.size(); }
    void clear() { entries_.clear(); }

private:
    std::map<std::tuple<std::size_t, std::size_t, std::size_t>, HeadSubspaces> entries_;
};

// Q' = Q + alpha Q P_tgt - beta Q P_oth, then every row is rescaled to its
// pre-steering L2 norm. Rows whose input norm is 0 or whose updated norm is
// below 1e-12 are returned unscaled.
Matrix steer_queries(const Matrix& q_star, const RidgeProjector& p_tgt, const RidgeProjector& p_oth, double alpha,
                     double beta);

// Builds the per-head subspaces for `event` from that head's key matrix.
HeadSubspaces build_head_subspaces(const Matrix& keys, const AnchorIndexSet& anchors, std::size_t event,
                                   const SteeringConfig& cfg);

// Steers every positive-width span of `state` in place. Keys and rows outside
// the spans are never written. With schedule_active == false nothing happens.
LayerOutcome apply_layer(AttentionState& state, const EventPlan& plan, const SpanAssignment& spans,
                         const AnchorIndexSet& anchors, bool schedule_active, const SteeringConfig& cfg = {},
                         SubspaceCache* cache = nullptr, std::size_t layer_id = 0);

} // namespace evsteer
