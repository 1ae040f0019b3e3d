#include <gtest/gtest.h>

#include <cmath>

#include "aima/grounding.hpp"
#include "aima/rng.hpp"

using namespace aima;

namespace {

// Hand-buildable trace: hidden states and attention rows are plain data.
struct FakeTraceBuilder {
    int layers, heads, visual, query, dim;
    ForwardTrace trace;
    SequenceLayout layout;

    FakeTraceBuilder(int L, int H, int V, int Q, int d)
        : layers(L), heads(H), visual(V), query(Q), dim(d) {
        layout.visual_len = V;
        layout.query_len = Q;
        trace.layout = layout;
        trace.hidden.assign(std::size_t(L) + 1, Tensor(layout.total(), d));
        trace.anchor_attn.assign(std::size_t(L),
                                 std::vector<std::vector<double>>(
                                     std::size_t(H), std::vector<double>(std::size_t(V), 0.0)));
        trace.query_attn.assign(std::size_t(L),
                                std::vector<Tensor>(std::size_t(H), Tensor(Q, V)));
    }

    void set_hidden(int layer_out, int pos, std::vector<double> v) {
        for (int c = 0; c < dim; ++c) trace.hidden[std::size_t(layer_out)].at(pos, c) = v[std::size_t(c)];
    }
    void set_anchor_row(int l, int h, std::vector<double> row) {
        trace.anchor_attn[std::size_t(l)][std::size_t(h)] = std::move(row);
    }
    void set_query_row(int l, int h, int q, std::vector<double> row) {
        for (int j = 0; j < visual; ++j)
            trace.query_attn[std::size_t(l)][std::size_t(h)].at(q, j) = row[std::size_t(j)];
    }
};

FakeTraceBuilder random_fake(Rng& rng, int L, int H, int V, int Q, int d) {
    FakeTraceBuilder b(L, H, V, Q, d);
    for (int l = 0; l <= L; ++l)
        for (int p = 0; p < b.layout.total(); ++p)
            for (int c = 0; c < d; ++c) b.trace.hidden[std::size_t(l)].at(p, c) = rng.next_normal();
    for (int l = 0; l < L; ++l)
        for (int h = 0; h < H; ++h) {
            // attention-like rows: non-negative, visual slice sums below 1
            std::vector<double> row(std::size_t(V), 0.0);
            double total = 0.0;
            for (double& v : row) {
                v = rng.next_double();
                total += v;
            }
            double keep = 0.3 + 0.6 * rng.next_double();
            for (double& v : row) v = v / total * keep;
            b.set_anchor_row(l, h, row);
            for (int q = 0; q < Q; ++q) {
                std::vector<double> qr(std::size_t(V), 0.0);
                double t2 = 0.0;
                for (double& v : qr) {
                    v = rng.next_double();
                    t2 += v;
                }
                double k2 = 0.2 + 0.7 * rng.next_double();
                for (double& v : qr) v = v / t2 * k2;
                b.set_query_row(l, h, q, qr);
            }
        }
    return b;
}

}  // namespace

TEST(SinkScores, IdenticalAndOrthogonalVectors) {
    // 1 layer, 2 visual tokens, 1 query token, d=3
    FakeTraceBuilder b(1, 1, 2, 1, 3);
    b.set_hidden(1, 0, {1, 0, 0});
    b.set_hidden(1, 1, {1, 0, 0});
    b.set_hidden(1, 2, {1, 0, 0});  // query identical to every visual state
    SinkScores s = visual_sink_scores(b.trace, b.layout);
    EXPECT_NEAR(s.per_layer[0][0], 2.0, 1e-12);  // |V| = 2
    EXPECT_NEAR(s.summed[0], 2.0, 1e-12);

    b.set_hidden(1, 2, {0, 1, 0});  // orthogonal
    SinkScores o = visual_sink_scores(b.trace, b.layout);
    EXPECT_NEAR(o.summed[0], 0.0, 1e-12);
}

TEST(SinkScores, HandComputedTable) {
    // 2 queries, 2 visuals, d=3, 1 layer
    FakeTraceBuilder b(1, 1, 2, 2, 3);
    b.set_hidden(1, 0, {1, 0, 0});
    b.set_hidden(1, 1, {0, 3, 4});
    b.set_hidden(1, 2, {2, 0, 0});
    b.set_hidden(1, 3, {0, 0, 5});
    SinkScores s = visual_sink_scores(b.trace, b.layout);
    // q0 = (2,0,0): cos with (1,0,0) = 1; with (0,3,4) = 0
    EXPECT_NEAR(s.per_layer[0][0], 1.0, 1e-12);
    // q1 = (0,0,5): cos with (1,0,0) = 0; with (0,3,4) = 20/(5*5) = 0.8
    EXPECT_NEAR(s.per_layer[0][1], 0.8, 1e-12);
}

TEST(SinkScores, ZeroNormCountsAsZero) {
    FakeTraceBuilder b(1, 1, 2, 1, 3);
    b.set_hidden(1, 0, {0, 0, 0});  // zero-norm visual state
    b.set_hidden(1, 1, {1, 1, 0});
    b.set_hidden(1, 2, {1, 1, 0});
    SinkScores s = visual_sink_scores(b.trace, b.layout);
    EXPECT_NEAR(s.summed[0], 1.0, 1e-12);  // only the nonzero term
}

TEST(SelectSinks, SingleToken) {
    SinkScores s;
    s.per_layer = {{3.0}, {1.0}};
    s.summed = {4.0};
    SinkSelection g = select_sinks(s, SinkMode::global, 1);
    EXPECT_EQ(g.global_indices, std::vector<int>{0});
    SinkSelection l = select_sinks(s, SinkMode::layerwise, 1);
    EXPECT_EQ(l.per_layer_indices[0], std::vector<int>{0});
    EXPECT_EQ(l.per_layer_indices[1], std::vector<int>{0});
}

TEST(SelectSinks, GlobalArgmax) {
    SinkScores s;
    s.per_layer = {{3.0, 9.0, 1.0}};
    s.summed = {3.0, 9.0, 1.0};
    SinkSelection g = select_sinks(s, SinkMode::global, 1);
    EXPECT_EQ(g.global_indices, std::vector<int>{1});
}

TEST(SelectSinks, LayerwiseDiffersPerLayer) {
    SinkScores s;
    s.per_layer = {{9.0, 2.0, 1.0}, {1.0, 2.0, 9.0}};
    s.summed = {10.0, 4.0, 10.0};
    SinkSelection l = select_sinks(s, SinkMode::layerwise, 1);
    EXPECT_EQ(l.per_layer_indices[0], std::vector<int>{0});
    EXPECT_EQ(l.per_layer_indices[1], std::vector<int>{2});
    // summed ties at 10.0 break to the lowest position
    SinkSelection g = select_sinks(s, SinkMode::global, 1);
    EXPECT_EQ(g.global_indices, std::vector<int>{0});
}

TEST(SelectSinks, Errors) {
    SinkScores s;
    s.per_layer = {{1.0, 2.0}};
    s.summed = {1.0, 2.0};
    EXPECT_THROW(select_sinks(s, SinkMode::global, 3), Error);
    SinkScores empty;
    EXPECT_THROW(select_sinks(empty, SinkMode::global, 1), Error);
}

TEST(HeadWeights, UniformIsConstant) {
    Rng rng(2);
    FakeTraceBuilder b = random_fake(rng, 2, 2, 6, 2, 8);
    HeadWeights hw = head_weights(b.trace, b.layout, Strategy::uniform);
    for (double w : hw.w) EXPECT_NEAR(w, 0.25, 1e-12);
}

TEST(HeadWeights, EqualRawScoresGiveEqualWeights) {
    FakeTraceBuilder b(1, 2, 3, 1, 4);
    b.set_anchor_row(0, 0, {0.1, 0.2, 0.3});
    b.set_anchor_row(0, 1, {0.3, 0.2, 0.1});  // same total mass
    HeadWeights hw = head_weights(b.trace, b.layout, Strategy::anchor);
    EXPECT_NEAR(hw.w[0], 0.5, 1e-12);
    EXPECT_NEAR(hw.w[1], 0.5, 1e-12);
}

TEST(HeadWeights, SinkMatchesBruteForce) {
    Rng rng(3);
    FakeTraceBuilder b = random_fake(rng, 2, 2, 5, 3, 8);
    SinkScores scores = visual_sink_scores(b.trace, b.layout);
    SinkSelection sel = select_sinks(scores, SinkMode::layerwise, 2);
    HeadWeights hw = head_weights(b.trace, b.layout, Strategy::sink, &sel);

    // independent evaluation: raw = sum over selected rows, then softmax
    std::vector<double> raw;
    for (int l = 0; l < 2; ++l)
        for (int h = 0; h < 2; ++h) {
            double s = 0.0;
            for (int qi : sel.per_layer_indices[std::size_t(l)])
                for (int j = 0; j < 5; ++j)
                    s += b.trace.query_attn[std::size_t(l)][std::size_t(h)].at(qi, j);
            raw.push_back(s);
        }
    double mx = *std::max_element(raw.begin(), raw.end());
    double z = 0.0;
    for (double& v : raw) {
        v = std::exp(v - mx);
        z += v;
    }
    for (std::size_t i = 0; i < raw.size(); ++i) EXPECT_NEAR(hw.w[i], raw[i] / z, 1e-12);
}

TEST(HeadWeights, SinkOnAnchorRowReproducesAnchorStrategy) {
    // a trace where query row 0 equals the anchor row in every head: selecting
    // that row as the sink must reproduce the anchor strategy's raw scores
    Rng rng(4);
    FakeTraceBuilder b = random_fake(rng, 2, 2, 5, 2, 8);
    for (int l = 0; l < 2; ++l)
        for (int h = 0; h < 2; ++h)
            b.set_query_row(l, h, 0, b.trace.anchor_attn[std::size_t(l)][std::size_t(h)]);
    SinkSelection sel;
    sel.mode = SinkMode::global;
    sel.k = 1;
    sel.global_indices = {0};
    HeadWeights via_sink = head_weights(b.trace, b.layout, Strategy::sink, &sel);
    HeadWeights via_anchor = head_weights(b.trace, b.layout, Strategy::anchor);
    for (std::size_t i = 0; i < via_sink.w.size(); ++i)
        EXPECT_DOUBLE_EQ(via_sink.w[i], via_anchor.w[i]);
}

TEST(HeadWeights, SoftMaximalWhenHeadMatchesGlobal) {
    Rng rng(5);
    FakeTraceBuilder b = random_fake(rng, 2, 2, 4, 3, 8);
    // make head (0,0)'s token-visual profile exactly the global profile
    SinkScores scores = visual_sink_scores(b.trace, b.layout);
    std::vector<double> dg = normalize_nonneg(scores.summed);
    for (int q = 0; q < 3; ++q) {
        std::vector<double> row(4, dg[std::size_t(q)] / 4.0);
        b.set_query_row(0, 0, q, row);
    }
    HeadWeights hw = head_weights(b.trace, b.layout, Strategy::soft);
    for (std::size_t i = 1; i < hw.w.size(); ++i) EXPECT_GE(hw.w[0] + 1e-15, hw.w[i]);
}

TEST(HeadWeights, MissingInputsFail) {
    Rng rng(6);
    FakeTraceBuilder b = random_fake(rng, 1, 1, 3, 2, 4);
    b.trace.query_attn.clear();
    EXPECT_THROW(head_weights(b.trace, b.layout, Strategy::all_query), Error);
    EXPECT_THROW(head_weights(b.trace, b.layout, Strategy::sink), Error);
    EXPECT_NO_THROW(head_weights(b.trace, b.layout, Strategy::anchor));
    EXPECT_NO_THROW(head_weights(b.trace, b.layout, Strategy::uniform));
}

TEST(Aggregate, SingleHeadIsRenormalizedRow) {
    PatchGrid grid = PatchGrid::make(48, 16, 16);
    AnchorAttn rows{{{0.1, 0.2, 0.1}}};
    HeadWeights hw;
    hw.layers = 1;
    hw.heads = 1;
    hw.w = {1.0};
    PatchDistribution d = aggregate(rows, hw, grid);
    EXPECT_NEAR(d.values[0], 0.25, 1e-12);
    EXPECT_NEAR(d.values[1], 0.5, 1e-12);
    EXPECT_NEAR(d.values[2], 0.25, 1e-12);
}

TEST(Aggregate, HandComputedMix) {
    PatchGrid grid = PatchGrid::make(48, 16, 16);
    // 2 layers x 2 "heads" of 3-patch rows? Use 2x1 to keep the arithmetic tight
    AnchorAttn rows{
        {{0.2, 0.0, 0.0}, {0.0, 0.2, 0.0}},
        {{0.0, 0.0, 0.4}, {0.4, 0.0, 0.0}},
    };
    HeadWeights hw;
    hw.layers = 2;
    hw.heads = 2;
    hw.w = {0.4, 0.1, 0.3, 0.2};
    PatchDistribution d = aggregate(rows, hw, grid);
    // raw = (0.4*0.2 + 0.2*0.4, 0.1*0.2, 0.3*0.4) / 4 = (0.16, 0.02, 0.12)/4
    double total = 0.16 + 0.02 + 0.12;
    EXPECT_NEAR(d.values[0], 0.16 / total, 1e-12);
    EXPECT_NEAR(d.values[1], 0.02 / total, 1e-12);
    EXPECT_NEAR(d.values[2], 0.12 / total, 1e-12);
}

TEST(Aggregate, UniformWeightsEqualMeanOfRows) {
    Rng rng(7);
    FakeTraceBuilder b = random_fake(rng, 2, 2, 6, 2, 4);
    PatchGrid grid = PatchGrid::make(48, 32, 16);
    HeadWeights hw = head_weights(b.trace, b.layout, Strategy::uniform);
    PatchDistribution d = aggregate(b.trace.anchor_attn, hw, grid);
    std::vector<double> mean(6, 0.0);
    double total = 0.0;
    for (int l = 0; l < 2; ++l)
        for (int h = 0; h < 2; ++h)
            for (int j = 0; j < 6; ++j) {
                mean[std::size_t(j)] += b.trace.anchor_attn[std::size_t(l)][std::size_t(h)][std::size_t(j)];
                total += b.trace.anchor_attn[std::size_t(l)][std::size_t(h)][std::size_t(j)];
            }
    for (int j = 0; j < 6; ++j) EXPECT_NEAR(d.values[std::size_t(j)], mean[std::size_t(j)] / total, 1e-12);
}

TEST(Aggregate, AllZeroFails) {
    PatchGrid grid = PatchGrid::make(32, 16, 16);
    AnchorAttn rows{{{0.0, 0.0}}};
    HeadWeights hw;
    hw.layers = 1;
    hw.heads = 1;
    hw.w = {1.0};
    EXPECT_THROW(aggregate(rows, hw, grid), Error);
}

TEST(VanillaAggregate, SingleRowIdentity) {
    FakeTraceBuilder b(1, 1, 3, 1, 4);
    b.set_query_row(0, 0, 0, {0.1, 0.3, 0.1});
    PatchGrid grid = PatchGrid::make(48, 16, 16);
    PatchDistribution d = vanilla_aggregate(b.trace, b.layout, grid);
    EXPECT_NEAR(d.values[0], 0.2, 1e-12);
    EXPECT_NEAR(d.values[1], 0.6, 1e-12);
    EXPECT_NEAR(d.values[2], 0.2, 1e-12);
}

TEST(VanillaAggregate, DuplicateRowsIdempotent) {
    FakeTraceBuilder one(1, 1, 3, 1, 4);
    one.set_query_row(0, 0, 0, {0.1, 0.3, 0.1});
    FakeTraceBuilder two(1, 1, 3, 2, 4);
    two.set_query_row(0, 0, 0, {0.1, 0.3, 0.1});
    two.set_query_row(0, 0, 1, {0.1, 0.3, 0.1});
    PatchGrid grid = PatchGrid::make(48, 16, 16);
    PatchDistribution a = vanilla_aggregate(one.trace, one.layout, grid);
    PatchDistribution b2 = vanilla_aggregate(two.trace, two.layout, grid);
    for (int j = 0; j < 3; ++j) EXPECT_NEAR(a.values[std::size_t(j)], b2.values[std::size_t(j)], 1e-12);
}

TEST(VanillaAggregate, EqualsUniformAggregateForSingleQueryToken) {
    Rng rng(8);
    FakeTraceBuilder b = random_fake(rng, 2, 2, 5, 1, 4);
    PatchGrid grid = PatchGrid::make(80, 16, 16);
    PatchDistribution vanilla = vanilla_aggregate(b.trace, b.layout, grid);
    // aggregate the single query row per head with uniform weights
    AnchorAttn qrows(2, std::vector<std::vector<double>>(2));
    for (int l = 0; l < 2; ++l)
        for (int h = 0; h < 2; ++h) {
            std::vector<double> row(5);
            for (int j = 0; j < 5; ++j) row[std::size_t(j)] = b.trace.query_attn[std::size_t(l)][std::size_t(h)].at(0, j);
            qrows[std::size_t(l)][std::size_t(h)] = row;
        }
    HeadWeights hw = head_weights(b.trace, b.layout, Strategy::uniform);
    PatchDistribution agg = aggregate(qrows, hw, grid);
    for (int j = 0; j < 5; ++j) EXPECT_NEAR(vanilla.values[std::size_t(j)], agg.values[std::size_t(j)], 1e-12);
}

TEST(PredictClick, ArgmaxCenterAndTies) {
    PatchGrid grid = PatchGrid::make(64, 64, 16);
    PatchDistribution d;
    d.grid = grid;
    d.values.assign(16, 0.0);
    d.values[0] = 1.0;
    Point p = predict_click(d);
    EXPECT_DOUBLE_EQ(p.x, 8.0);
    EXPECT_DOUBLE_EQ(p.y, 8.0);

    // uniform distribution decodes to the lowest-index patch center
    std::fill(d.values.begin(), d.values.end(), 1.0 / 16.0);
    Point u = predict_click(d);
    EXPECT_DOUBLE_EQ(u.x, 8.0);
    EXPECT_DOUBLE_EQ(u.y, 8.0);
}

TEST(PredictClick, CentroidMode) {
    PatchGrid grid = PatchGrid::make(64, 16, 16);  // 4 patches in one row
    PatchDistribution d;
    d.grid = grid;
    d.values = {0.5, 0.5, 0.0, 0.0};
    Point p = predict_click(d, ClickMode::neighborhood_centroid);
    EXPECT_DOUBLE_EQ(p.x, 16.0);  // midpoint of centers (8, 24)
    EXPECT_DOUBLE_EQ(p.y, 8.0);
}

TEST(PredictClick, InvariantToPositiveRescaling) {
    Rng rng(9);
    PatchGrid grid = PatchGrid::make(64, 64, 16);
    for (int t = 0; t < 100; ++t) {
        PatchDistribution d;
        d.grid = grid;
        d.values.assign(16, 0.0);
        for (double& v : d.values) v = rng.next_double();
        double s = 0;
        for (double v : d.values) s += v;
        for (double& v : d.values) v /= s;
        PatchDistribution scaled = d;
        for (double& v : scaled.values) v *= 7.5;  // off the simplex, same argmax
        Point a = predict_click(d);
        Point b = predict_click(scaled);
        EXPECT_DOUBLE_EQ(a.x, b.x);
        EXPECT_DOUBLE_EQ(a.y, b.y);
    }
}

TEST(Invariants, SimplexOverFuzzedTraces) {
    Rng rng(10);
    PatchGrid grid = PatchGrid::make(96, 64, 16);  // 6x4 = 24 patches
    for (int t = 0; t < 300; ++t) {
        int L = 1 + int(rng.next_below(3));
        int H = 1 + int(rng.next_below(3));
        int Q = 1 + int(rng.next_below(4));
        FakeTraceBuilder b = random_fake(rng, L, H, 24, Q, 8);
        SinkScores scores = visual_sink_scores(b.trace, b.layout);
        SinkMode mode = rng.next_below(2) ? SinkMode::global : SinkMode::layerwise;
        SinkSelection sel = select_sinks(scores, mode, 1 + int(rng.next_below(std::uint64_t(Q))));
        for (Strategy s : {Strategy::uniform, Strategy::all_query, Strategy::anchor, Strategy::sink,
                           Strategy::soft}) {
            HeadWeights hw = head_weights(b.trace, b.layout, s, &sel);
            double sum = 0.0;
            for (double w : hw.w) {
                ASSERT_GE(w, 0.0);
                sum += w;
            }
            ASSERT_NEAR(sum, 1.0, 1e-9);
            PatchDistribution d = aggregate(b.trace.anchor_attn, hw, grid);
            double dsum = 0.0;
            for (double v : d.values) {
                ASSERT_GE(v, 0.0);
                dsum += v;
            }
            ASSERT_NEAR(dsum, 1.0, 1e-9);
        }
    }
}

TEST(Invariants, SoftmaxShiftInvariance) {
    Rng rng(11);
    for (int t = 0; t < 100; ++t) {
        std::vector<double> raw(8);
        for (double& v : raw) v = rng.next_normal() * 3;
        std::vector<double> shifted = raw;
        double c = rng.next_normal();
        for (double& v : shifted) v += c;
        std::vector<double> a = softmax(raw), b = softmax(shifted);
        for (std::size_t i = 0; i < a.size(); ++i) ASSERT_NEAR(a[i], b[i], 1e-12);
    }
}

TEST(StrategyNames, RoundTrip) {
    for (Strategy s : {Strategy::uniform, Strategy::all_query, Strategy::anchor, Strategy::sink,
                       Strategy::soft, Strategy::vanilla})
        EXPECT_EQ(parse_strategy(strategy_name(s)), s);
    EXPECT_THROW(parse_strategy("bogus"), Error);
}
