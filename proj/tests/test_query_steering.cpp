#include "evsteer/query_steering.hpp"
#include "evsteer/schedule.hpp"
#include "evsteer/simulator.hpp"

#include "oracles.hpp"

#include <gtest/gtest.h>

#include <random>

using namespace evsteer;

namespace {

Matrix random_matrix(std::mt19937_64& rng, Eigen::Index r, Eigen::Index c)
{
    std::normal_distribution<double> n(0.0, 1.0);
    Matrix m(r, c);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = n(rng);
    return m;
}

RidgeProjector exact(const Matrix& k)
{
    return build_projector(k, 0.0);
}

} // namespace

TEST(SteerQueries, ZeroStrengthIsIdentity)
{
    std::mt19937_64 rng(1);
    const Matrix q = random_matrix(rng, 5, 6);
    const auto pt = exact(random_matrix(rng, 2, 6));
    const auto po = exact(random_matrix(rng, 2, 6));
    const Matrix out = steer_queries(q, pt, po, 0.0, 0.0);
    EXPECT_EQ(out, q);
}

TEST(SteerQueries, ZeroAndIdentityInputs)
{
    const auto id = exact(Matrix::Identity(4, 4));
    EXPECT_EQ(steer_queries(Matrix::Zero(3, 4), id, id, 0.7, 0.2), Matrix::Zero(3, 4));
    std::mt19937_64 rng(2);
    const Matrix q = random_matrix(rng, 3, 4);
    const Matrix out = steer_queries(q, id, exact(Matrix::Zero(1, 4) + Matrix::Identity(1, 4)), 0.0, 0.0);
    EXPECT_EQ(out, q);
    // alpha * q * I only rescales rows, which the renormalization undoes.
    const Matrix scaled = steer_queries(q, id, id, 0.5, 0.0);
    EXPECT_LE((scaled - q).norm(), 1e-12);
}

TEST(SteerQueries, OrthogonalDecomposition)
{
    Vector kt = Vector::Unit(3, 0);
    Vector ko = Vector::Unit(3, 1);
    const Matrix q = (kt + ko).transpose();
    const Matrix out = steer_queries(q, exact(kt.transpose()), exact(ko.transpose()), 1.0, 1.0);
    EXPECT_NEAR(out(0, 0), std::sqrt(2.0), 1e-14);
    EXPECT_NEAR(out(0, 1), 0.0, 1e-14);
    EXPECT_NEAR(out(0, 2), 0.0, 1e-14);
}

TEST(SteerQueries, MatchesNaiveUpdate)
{
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> s(0.0, 2.0);
    for (int trial = 0; trial < 20; ++trial) {
        const Matrix q = random_matrix(rng, 6, 8);
        const Matrix kt = random_matrix(rng, 2, 8);
        const Matrix ko = random_matrix(rng, 3, 8);
        const auto pt = build_projector(kt, relative_ridge(kt));
        const auto po = build_projector(ko, relative_ridge(ko));
        const double a = s(rng);
        const double b = s(rng);
        const Matrix out = steer_queries(q, pt, po, a, b);
        const Matrix ref = oracle::naive_steer(q, pt.matrix, po.matrix, a, b);
        EXPECT_LE((out - ref).norm(), 1e-11 * q.norm());
        for (Eigen::Index r = 0; r < q.rows(); ++r) EXPECT_NEAR(out.row(r).norm(), q.row(r).norm(), 1e-9);
    }
}

TEST(SteerQueries, Validation)
{
    const auto id = exact(Matrix::Identity(3, 3));
    EXPECT_THROW(steer_queries(Matrix::Ones(2, 3), id, id, -1.0, 0.0), ValidationError);
    EXPECT_THROW(steer_queries(Matrix::Ones(2, 4), id, id, 1.0, 0.0), DimensionError);
}

class LayerTest : public ::testing::Test {
protected:
    void SetUp() override
    {
        SimScenario sc;
        sc.seed = 21;
        world = generate_scenario(sc, 1);
    }
    SimWorld world;
};

TEST_F(LayerTest, InactiveScheduleLeavesStateUntouched)
{
    AttentionState state = world.layers[0];
    const auto before = state;
    const auto out = apply_layer(state, world.plan, world.spans, world.anchors, false);
    EXPECT_EQ(out.steered_pairs, 0u);
    for (std::size_t h = 0; h < state.head_count(); ++h) {
        EXPECT_EQ(state.queries[h], before.queries[h]);
        EXPECT_EQ(state.keys[h], before.keys[h]);
    }
}

TEST_F(LayerTest, ActiveLayerSteersEveryHeadAndSpan)
{
    AttentionState state = world.layers[0];
    const auto before = state;
    const auto out = apply_layer(state, world.plan, world.spans, world.anchors, true);
    EXPECT_EQ(out.steered_pairs, world.spans.spans.size() * state.head_count());
    ASSERT_EQ(out.contexts.size(), world.spans.spans.size());
    for (std::size_t h = 0; h < state.head_count(); ++h) {
        EXPECT_EQ(state.keys[h], before.keys[h]);
        for (Eigen::Index r = 0; r < state.token_count(); ++r)
            EXPECT_NEAR(state.queries[h].row(r).norm(), before.queries[h].row(r).norm(), 1e-9);
    }
}

TEST_F(LayerTest, LaterSpanGainsTargetAlignment)
{
    AttentionState state = world.layers[0];
    const auto before = state;
    apply_layer(state, world.plan, world.spans, world.anchors, true);
    const auto& span = world.spans.spans[1];
    const auto rows = span_row_indices(span, world.plan.tokens_per_frame);
    for (std::size_t h = 0; h < state.head_count(); ++h) {
        const Vector dir = dominant_direction(gather_rows(state.keys[h], world.anchors.per_event[span.event_id]));
        const auto n = static_cast<Eigen::Index>(rows.size());
        const auto b = static_cast<Eigen::Index>(rows.begin);
        const double pre = (before.queries[h].middleRows(b, n) * dir).mean();
        const double post = (state.queries[h].middleRows(b, n) * dir).mean();
        EXPECT_GT(post, pre) << "head " << h;
    }
}

TEST_F(LayerTest, ForcedZeroStrengthIsBitIdentical)
{
    AttentionState state = world.layers[0];
    const auto before = state;
    SteeringConfig cfg;
    cfg.forced_strengths = Vector2::Zero();
    apply_layer(state, world.plan, world.spans, world.anchors, true, cfg);
    for (std::size_t h = 0; h < state.head_count(); ++h) EXPECT_EQ(state.queries[h], before.queries[h]);
}

TEST_F(LayerTest, CacheReusesSubspaces)
{
    SubspaceCache cache;
    AttentionState a = world.layers[0];
    AttentionState b = world.layers[0];
    apply_layer(a, world.plan, world.spans, world.anchors, true, {}, &cache, 0);
    const std::size_t filled = cache.size();
    EXPECT_EQ(filled, world.spans.spans.size() * a.head_count());
    apply_layer(b, world.plan, world.spans, world.anchors, true, {}, &cache, 0);
    EXPECT_EQ(cache.size(), filled);
    for (std::size_t h = 0; h < a.head_count(); ++h) EXPECT_EQ(a.queries[h], b.queries[h]);

    SteeringConfig rebuild;
    rebuild.rebuild_subspaces = true;
    AttentionState c = world.layers[0];
    apply_layer(c, world.plan, world.spans, world.anchors, true, rebuild, &cache, 0);
    for (std::size_t h = 0; h < a.head_count(); ++h) EXPECT_EQ(a.queries[h], c.queries[h]);
}

TEST(ApplyLayer, SingleEventEnhancesOnly)
{
    SimScenario sc;
    sc.event_count = 2;
    sc.seed = 4;
    auto world = generate_scenario(sc, 1);
    EventPlan plan = world.plan;
    plan.events.resize(1);
    SpanAssignment spans;
    spans.spans = {{0, 0, sc.latent_frames}};
    AnchorIndexSet anchors;
    anchors.per_event = {world.anchors.per_event[0]};
    AttentionState state = world.layers[0];
    const auto keys = state.keys;
    const auto out = apply_layer(state, plan, spans, anchors, true);
    EXPECT_FALSE(out.warnings.empty());
    ASSERT_EQ(out.contexts.size(), 1u);
    for (const auto& s : out.contexts[0].strengths) EXPECT_EQ(s.beta, 0.0);
    for (std::size_t h = 0; h < state.head_count(); ++h) EXPECT_EQ(state.keys[h], keys[h]);
}

TEST(ApplyLayer, RejectsMismatchedFrameMap)
{
    SimScenario sc;
    sc.seed = 5;
    auto world = generate_scenario(sc, 1);
    AttentionState state = world.layers[0];
    state.frame_map.assign(state.frame_map.size(), 0);
    EXPECT_THROW(apply_layer(state, world.plan, world.spans, world.anchors, true), ValidationError);
}

TEST(Schedule, Gating)
{
    const auto s = SteeringSchedule::standard();
    EXPECT_EQ(s.total_steps, 50);
    EXPECT_EQ(s.total_blocks, 40);
    EXPECT_TRUE(is_active(0, 0, s));
    EXPECT_TRUE(is_active(19, 19, s));
    EXPECT_FALSE(is_active(20, 0, s));
    EXPECT_FALSE(is_active(0, 20, s));
    EXPECT_EQ(s.active_pairs(), 400);

    SteeringSchedule off = s;
    off.max_steps = 0;
    for (int t = 0; t < off.total_steps; ++t)
        for (int b = 0; b < off.total_blocks; ++b) EXPECT_FALSE(is_active(t, b, off));

    EXPECT_THROW(is_active(50, 0, s), ValidationError);
    EXPECT_THROW(is_active(-1, 0, s), ValidationError);
    SteeringSchedule bad = s;
    bad.max_blocks = 41;
    EXPECT_THROW(bad.validate(), ValidationError);
}
