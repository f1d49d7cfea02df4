#include "evsteer/query_steering.hpp"

#include <algorithm>
#include <set>

namespace evsteer {

namespace {

constexpr double kMinUpdatedNorm = 1e-12;

void add_warning(LayerOutcome& out, std::string msg)
{
    if (std::find(out.warnings.begin(), out.warnings.end(), msg) == out.warnings.end()) {
        out.warnings.push_back(std::move(msg));
    }
}

double ridge_for(const Matrix& keys, const SteeringConfig& cfg)
{
    return cfg.absolute_ridge ? *cfg.absolute_ridge : relative_ridge(keys, cfg.ridge_scale);
}

} // namespace

void AttentionState::validate() const
{
    if (queries.empty() || queries.size() != keys.size()) {
        throw DimensionError("attention state: query and key head counts differ or are zero");
    }
    const auto s = token_count();
    const auto lk = key_count();
    const auto dh = head_dim();
    for (std::size_t h = 0; h < queries.size(); ++h) {
        if (queries[h].rows() != s || queries[h].cols() != dh) throw DimensionError("attention state: query shape mismatch");
        if (keys[h].rows() != lk || keys[h].cols() != dh) throw DimensionError("attention state: key shape mismatch");
    }
    if (static_cast<Eigen::Index>(frame_map.size()) != s) throw DimensionError("attention state: frame_map size != S");
    for (std::size_t r = 1; r < frame_map.size(); ++r) {
        if (frame_map[r] < frame_map[r - 1]) throw ValidationError("attention state: frame_map is not monotone");
    }
}

std::vector<int> AttentionState::frame_major_map(int latent_frames, int tokens_per_frame)
{
    std::vector<int> map;
    map.reserve(static_cast<std::size_t>(latent_frames) * static_cast<std::size_t>(tokens_per_frame));
    for (int f = 0; f < latent_frames; ++f) {
        for (int t = 0; t < tokens_per_frame; ++t) map.push_back(f);
    }
    return map;
}

const HeadSubspaces* SubspaceCache::find(std::size_t layer, std::size_t head, std::size_t event) const
{
    const auto it = entries_.find({layer, head, event});
    return it == entries_.end() ? nullptr : &it->second;
}

const HeadSubspaces& SubspaceCache::insert(std::size_t layer, std::size_t head, std::size_t event, HeadSubspaces value)
{
    return entries_.insert_or_assign({layer, head, event}, std::move(value)).first->second;
}

Matrix steer_queries(const Matrix& q_star, const RidgeProjector& p_tgt, const RidgeProjector& p_oth, double alpha,
                     double beta)
{
    if (!(alpha >= 0.0) || !(beta >= 0.0)) throw ValidationError("steer_queries: strengths must be nonnegative");
    if (q_star.cols() != p_tgt.dim() || q_star.cols() != p_oth.dim()) {
        throw DimensionError("steer_queries: projector dimension does not match query width");
    }
    if (alpha == 0.0 && beta == 0.0) return q_star;

    Matrix updated = q_star;
    if (alpha != 0.0) updated.noalias() += alpha * (q_star * p_tgt.matrix);
    if (beta != 0.0) updated.noalias() -= beta * (q_star * p_oth.matrix);

    for (Eigen::Index r = 0; r < updated.rows(); ++r) {
        const double before = q_star.row(r).norm();
        const double after = updated.row(r).norm();
        if (before == 0.0 || after < kMinUpdatedNorm) continue;
        updated.row(r) *= before / after;
    }
    return updated;
}

HeadSubspaces build_head_subspaces(const Matrix& keys, const AnchorIndexSet& anchors, std::size_t event,
                                   const SteeringConfig& cfg)
{
    const auto& own = anchors.per_event.at(event);
    if (own.empty()) throw ValidationError("event " + std::to_string(event) + " has no anchor tokens");

    HeadSubspaces out;
    const Matrix k_tgt = gather_rows(keys, own);
    out.p_tgt = build_projector(k_tgt, ridge_for(k_tgt, cfg));
    out.dirs.k_tgt = dominant_direction(k_tgt);

    std::set<std::size_t> others;
    std::vector<Vector> competitor_dirs;
    for (std::size_t j = 0; j < anchors.per_event.size(); ++j) {
        if (j == event || anchors.per_event[j].empty()) continue;
        others.insert(anchors.per_event[j].begin(), anchors.per_event[j].end());
        competitor_dirs.push_back(dominant_direction(gather_rows(keys, anchors.per_event[j])));
    }

    const Eigen::Index dim = keys.cols();
    out.dirs.k_oth.resize(dim, static_cast<Eigen::Index>(competitor_dirs.size()));
    for (std::size_t j = 0; j < competitor_dirs.size(); ++j) out.dirs.k_oth.col(static_cast<Eigen::Index>(j)) = competitor_dirs[j];

    out.has_competitors = !others.empty();
    if (out.has_competitors) {
        const std::vector<std::size_t> idx(others.begin(), others.end());
        const Matrix k_oth = gather_rows(keys, idx);
        out.p_oth = build_projector(k_oth, ridge_for(k_oth, cfg));
    } else {
        out.p_oth = RidgeProjector{Matrix::Zero(dim, dim), 0.0, 0};
    }
    return out;
}

LayerOutcome apply_layer(AttentionState& state, const EventPlan& plan, const SpanAssignment& spans,
                         const AnchorIndexSet& anchors, bool schedule_active, const SteeringConfig& cfg,
                         SubspaceCache* cache, std::size_t layer_id)
{
    LayerOutcome out;
    if (!schedule_active) return out;

    state.validate();
    if (anchors.per_event.size() < spans.spans.size()) {
        throw ValidationError("apply_layer: anchor sets do not cover every span's event");
    }
    for (const auto& ids : anchors.per_event) {
        for (auto idx : ids) {
            if (static_cast<Eigen::Index>(idx) >= state.key_count()) {
                throw DimensionError("apply_layer: anchor index " + std::to_string(idx) + " >= L_k");
            }
        }
    }

    for (const auto& span : spans.spans) {
        if (span.empty()) {
            add_warning(out, "event " + std::to_string(span.event_id) + " has a zero-width span; skipped");
            continue;
        }
        const RowRange rows = span_row_indices(span, plan.tokens_per_frame);
        if (static_cast<Eigen::Index>(rows.end) > state.token_count()) {
            throw DimensionError("apply_layer: span rows exceed the query count");
        }
        for (std::size_t r = rows.begin; r < rows.end; ++r) {
            if (state.frame_map[r] < span.start || state.frame_map[r] >= span.end) {
                throw ValidationError("apply_layer: frame_map disagrees with span of event " + std::to_string(span.event_id));
            }
        }
        if (anchors.per_event[span.event_id].empty()) {
            add_warning(out, "event " + std::to_string(span.event_id) + " has no anchor tokens; skipped");
            continue;
        }

        SteeringContext ctx;
        ctx.event_id = span.event_id;
        ctx.rows = rows;
        const auto first = static_cast<Eigen::Index>(rows.begin);
        const auto count = static_cast<Eigen::Index>(rows.size());

        for (std::size_t h = 0; h < state.head_count(); ++h) {
            const HeadSubspaces* sub = nullptr;
            HeadSubspaces local;
            if (cache != nullptr && !cfg.rebuild_subspaces) {
                sub = cache->find(layer_id, h, span.event_id);
                if (sub == nullptr) {
                    sub = &cache->insert(layer_id, h, span.event_id,
                                         build_head_subspaces(state.keys[h], anchors, span.event_id, cfg));
                }
            } else {
                local = build_head_subspaces(state.keys[h], anchors, span.event_id, cfg);
                sub = &local;
            }
            if (!sub->has_competitors) {
                add_warning(out, "event " + std::to_string(span.event_id) + " has no competitors; suppression disabled");
            }

            auto slice = state.queries[h].middleRows(first, count);
            SteeringStrengths strengths;
            if (cfg.forced_strengths) {
                strengths.alpha = (*cfg.forced_strengths)[0];
                strengths.beta = sub->has_competitors ? (*cfg.forced_strengths)[1] : 0.0;
            } else {
                const Matrix q_star = slice;
                SolverInstance inst = sub->dirs.competitors() > 0
                                          ? *build_instance(q_star, sub->dirs, cfg.margin_eps)
                                          : instance_from_scores(q_star * sub->dirs.k_tgt, Matrix(count, 0), cfg.margin_eps);
                strengths = solve(inst, cfg.solver);
                if (!sub->has_competitors) strengths.beta = 0.0;
            }

            slice = steer_queries(slice, sub->p_tgt, sub->p_oth, strengths.alpha, strengths.beta);
            ctx.strengths.push_back(strengths);
            ++out.steered_pairs;
        }
        out.contexts.push_back(std::move(ctx));
    }
    return out;
}

} // namespace evsteer
