#pragma once

#include <algorithm>
#include <numeric>
#include <string>
#include <vector>

#include "aima/geometry.hpp"
#include "aima/model.hpp"

namespace aima {

constexpr double kKlEps = 1e-8;

enum class Strategy { uniform, all_query, anchor, sink, soft, vanilla };

inline const char* strategy_name(Strategy s) {
    switch (s) {
        case Strategy::uniform: return "uniform";
        case Strategy::all_query: return "all_query";
        case Strategy::anchor: return "anchor";
        case Strategy::sink: return "sink";
        case Strategy::soft: return "soft";
        case Strategy::vanilla: return "vanilla";
    }
    return "?";
}

inline Strategy parse_strategy(const std::string& name) {
    for (Strategy s : {Strategy::uniform, Strategy::all_query, Strategy::anchor, Strategy::sink,
                       Strategy::soft, Strategy::vanilla})
        if (name == strategy_name(s)) return s;
    fail_config("unknown strategy '" + name + "'");
}

enum class SinkMode { global, layerwise };

inline const char* sink_mode_name(SinkMode m) { return m == SinkMode::global ? "global" : "layerwise"; }

inline SinkMode parse_sink_mode(const std::string& name) {
    if (name == "global") return SinkMode::global;
    if (name == "layerwise") return SinkMode::layerwise;
    fail_config("unknown sink mode '" + name + "'");
}

/// Cosine-similarity mass between each query token's hidden state and all
/// visual hidden states, per layer and summed over layers.
struct SinkScores {
    std::vector<std::vector<double>> per_layer;  // [L][|Q|]
    std::vector<double> summed;                  // [|Q|]
};

struct SinkSelection {
    SinkMode mode = SinkMode::global;
    int k = 1;
    std::vector<int> global_indices;                  // K query positions
    std::vector<std::vector<int>> per_layer_indices;  // [L][K]

    const std::vector<int>& indices_for_layer(int l) const {
        return mode == SinkMode::global ? global_indices : per_layer_indices[std::size_t(l)];
    }
};

/// The two query-token visual-correlation profiles compared by the soft
/// weighting: the hidden-state one (global) and the per-head attention one.
struct TokenVisualDistributions {
    std::vector<double> global_dist;                       // [|Q|]
    std::vector<std::vector<std::vector<double>>> head_dists;  // [L][H][|Q|]
};

struct HeadWeights {
    int layers = 0;
    int heads = 0;
    std::vector<double> w;  // [L*H], softmax-normalized
    Strategy strategy = Strategy::uniform;

    double at(int l, int h) const { return w[std::size_t(l) * heads + h]; }
};

struct PatchDistribution {
    std::vector<double> values;  // simplex over |V|
    PatchGrid grid;
};

inline SinkScores visual_sink_scores(const ForwardTrace& trace, const SequenceLayout& layout) {
    const int L = int(trace.hidden.size()) - 1;
    require(L >= 1, ErrorClass::domain, "trace has no hidden states");
    SinkScores scores;
    scores.per_layer.assign(std::size_t(L), std::vector<double>(std::size_t(layout.query_len), 0.0));
    scores.summed.assign(std::size_t(layout.query_len), 0.0);
    for (int l = 0; l < L; ++l) {
        const Tensor& h = trace.hidden[std::size_t(l) + 1];  // output of block l
        const int d = h.cols;
        std::vector<double> vnorm(std::size_t(layout.visual_len));
        for (int j = 0; j < layout.visual_len; ++j)
            vnorm[std::size_t(j)] = std::sqrt(dot(h.row_ptr(j), h.row_ptr(j), d));
        for (int i = 0; i < layout.query_len; ++i) {
            const double* q = h.row_ptr(layout.text_begin() + i);
            double qn = std::sqrt(dot(q, q, d));
            double c = 0.0;
            if (qn > 0.0) {
                for (int j = 0; j < layout.visual_len; ++j) {
                    if (vnorm[std::size_t(j)] <= 0.0) continue;  // zero-norm term counts as 0
                    c += dot(q, h.row_ptr(j), d) / (qn * vnorm[std::size_t(j)]);
                }
            }
            scores.per_layer[std::size_t(l)][std::size_t(i)] = c;
            scores.summed[std::size_t(i)] += c;
        }
    }
    return scores;
}

namespace detail {
inline std::vector<int> top_k_indices(const std::vector<double>& scores, int k) {
    std::vector<int> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](int a, int b) {
        if (scores[std::size_t(a)] != scores[std::size_t(b)])
            return scores[std::size_t(a)] > scores[std::size_t(b)];
        return a < b;  // ties to the lowest token position
    });
    order.resize(std::size_t(k));
    std::sort(order.begin(), order.end());
    return order;
}
}  // namespace detail

inline SinkSelection select_sinks(const SinkScores& scores, SinkMode mode, int k) {
    const int q = int(scores.summed.size());
    require(q >= 1, ErrorClass::domain, "cannot select sinks from an empty query");
    require(k >= 1 && k <= q, ErrorClass::domain, "sink K out of range");
    SinkSelection sel;
    sel.mode = mode;
    sel.k = k;
    if (mode == SinkMode::global) {
        sel.global_indices = detail::top_k_indices(scores.summed, k);
    } else {
        sel.per_layer_indices.reserve(scores.per_layer.size());
        for (const auto& layer : scores.per_layer)
            sel.per_layer_indices.push_back(detail::top_k_indices(layer, k));
    }
    return sel;
}

/// Clamps negatives to zero and scales to sum 1; an all-nonpositive input
/// falls back to the uniform distribution.
inline std::vector<double> normalize_nonneg(const std::vector<double>& v) {
    std::vector<double> out(v.size());
    double total = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::max(v[i], 0.0);
        total += out[i];
    }
    if (total <= 0.0) {
        std::fill(out.begin(), out.end(), 1.0 / double(out.size()));
        return out;
    }
    for (double& x : out) x /= total;
    return out;
}

inline TokenVisualDistributions token_visual_distributions(const ForwardTrace& trace,
                                                           const SequenceLayout& layout) {
    require(trace.has_query_rows(), ErrorClass::domain,
            "trace is missing query attention rows");
    TokenVisualDistributions d;
    SinkScores scores = visual_sink_scores(trace, layout);
    d.global_dist = normalize_nonneg(scores.summed);
    const int L = int(trace.query_attn.size());
    const int H = int(trace.query_attn.front().size());
    d.head_dists.assign(std::size_t(L), std::vector<std::vector<double>>(std::size_t(H)));
    for (int l = 0; l < L; ++l) {
        for (int h = 0; h < H; ++h) {
            const Tensor& rows = trace.query_attn[std::size_t(l)][std::size_t(h)];
            std::vector<double> sums(std::size_t(layout.query_len), 0.0);
            for (int i = 0; i < layout.query_len; ++i) {
                const double* r = rows.row_ptr(i);
                double s = 0.0;
                for (int j = 0; j < layout.visual_len; ++j) s += r[j];
                sums[std::size_t(i)] = s;
            }
            d.head_dists[std::size_t(l)][std::size_t(h)] = normalize_nonneg(sums);
        }
    }
    return d;
}

/// KL(p||q) over p's support, with q floored at eps.
inline double kl_divergence(const std::vector<double>& p, const std::vector<double>& q,
                            double eps = kKlEps) {
    require(p.size() == q.size(), ErrorClass::domain, "KL: length mismatch");
    double kl = 0.0;
    for (std::size_t i = 0; i < p.size(); ++i) {
        if (p[i] <= 0.0) continue;
        kl += p[i] * (std::log(p[i]) - std::log(std::max(q[i], eps)));
    }
    return std::max(kl, 0.0);
}

/// Raw per-head importance scores before the softmax normalization.
inline std::vector<double> raw_head_scores(const ForwardTrace& trace, const SequenceLayout& layout,
                                           Strategy strategy, const SinkSelection* sinks) {
    const int L = int(trace.anchor_attn.size());
    require(L >= 1, ErrorClass::domain, "trace has no attention rows");
    const int H = int(trace.anchor_attn.front().size());
    const bool needs_query = strategy == Strategy::all_query || strategy == Strategy::sink ||
                             strategy == Strategy::soft;
    if (needs_query)
        require(trace.has_query_rows(), ErrorClass::domain,
                "strategy requires query attention rows in the trace");

    std::vector<double> raw(std::size_t(L) * H, 0.0);
    switch (strategy) {
        case Strategy::uniform:
            break;  // all zero -> equal weights after softmax
        case Strategy::anchor:
            for (int l = 0; l < L; ++l)
                for (int h = 0; h < H; ++h) {
                    const auto& row = trace.anchor_attn[std::size_t(l)][std::size_t(h)];
                    raw[std::size_t(l) * H + h] = std::accumulate(row.begin(), row.end(), 0.0);
                }
            break;
        case Strategy::all_query:
            for (int l = 0; l < L; ++l)
                for (int h = 0; h < H; ++h) {
                    const Tensor& rows = trace.query_attn[std::size_t(l)][std::size_t(h)];
                    raw[std::size_t(l) * H + h] =
                        std::accumulate(rows.data.begin(), rows.data.end(), 0.0);
                }
            break;
        case Strategy::sink: {
            require(sinks != nullptr, ErrorClass::domain, "sink strategy requires a selection");
            for (int l = 0; l < L; ++l) {
                const std::vector<int>& qs = sinks->indices_for_layer(l);
                for (int h = 0; h < H; ++h) {
                    const Tensor& rows = trace.query_attn[std::size_t(l)][std::size_t(h)];
                    double s = 0.0;
                    for (int qi : qs) {
                        const double* r = rows.row_ptr(qi);
                        for (int j = 0; j < layout.visual_len; ++j) s += r[j];
                    }
                    raw[std::size_t(l) * H + h] = s;
                }
            }
            break;
        }
        case Strategy::soft: {
            TokenVisualDistributions d = token_visual_distributions(trace, layout);
            for (int l = 0; l < L; ++l)
                for (int h = 0; h < H; ++h)
                    raw[std::size_t(l) * H + h] =
                        -kl_divergence(d.global_dist, d.head_dists[std::size_t(l)][std::size_t(h)]);
            break;
        }
        case Strategy::vanilla:
            fail_domain("vanilla aggregation has no head weights");
    }
    return raw;
}

inline std::vector<double> softmax(const std::vector<double>& v) {
    double mx = *std::max_element(v.begin(), v.end());
    std::vector<double> out(v.size());
    double z = 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        out[i] = std::exp(v[i] - mx);
        z += out[i];
    }
    for (double& x : out) x /= z;
    return out;
}

/// Head weights under any strategy, softmax-normalized over all L*H heads.
inline HeadWeights head_weights(const ForwardTrace& trace, const SequenceLayout& layout,
                                Strategy strategy, const SinkSelection* sinks = nullptr) {
    HeadWeights hw;
    hw.layers = int(trace.anchor_attn.size());
    hw.heads = int(trace.anchor_attn.front().size());
    hw.strategy = strategy;
    hw.w = softmax(raw_head_scores(trace, layout, strategy, sinks));
    return hw;
}

using AnchorAttn = std::vector<std::vector<std::vector<double>>>;

/// Weighted mean of the anchor's patch-wise attention rows, renormalized.
inline PatchDistribution aggregate(const AnchorAttn& anchor_attn, const HeadWeights& weights,
                                   const PatchGrid& grid) {
    const int L = int(anchor_attn.size());
    require(L == weights.layers && L >= 1, ErrorClass::domain, "aggregate: layer count mismatch");
    const int H = int(anchor_attn.front().size());
    require(H == weights.heads, ErrorClass::domain, "aggregate: head count mismatch");
    const std::size_t V = anchor_attn.front().front().size();
    require(int(V) == grid.size(), ErrorClass::domain, "aggregate: grid size mismatch");

    PatchDistribution dist;
    dist.grid = grid;
    dist.values.assign(V, 0.0);
    for (int l = 0; l < L; ++l)
        for (int h = 0; h < H; ++h) {
            const auto& row = anchor_attn[std::size_t(l)][std::size_t(h)];
            require(row.size() == V, ErrorClass::domain, "aggregate: row length mismatch");
            double w = weights.at(l, h) / double(L * H);
            for (std::size_t j = 0; j < V; ++j) dist.values[j] += w * row[j];
        }
    double total = std::accumulate(dist.values.begin(), dist.values.end(), 0.0);
    require(total > 0.0, ErrorClass::domain, "aggregate: all-zero patch mass");
    for (double& v : dist.values) v /= total;
    return dist;
}

/// Uniform mean over every (layer, head, query token) patch-wise row; the
/// baseline that skips the anchor entirely.
inline PatchDistribution vanilla_aggregate(const ForwardTrace& trace, const SequenceLayout& layout,
                                           const PatchGrid& grid) {
    require(trace.has_query_rows(), ErrorClass::domain, "vanilla aggregation needs query rows");
    require(layout.query_len >= 1, ErrorClass::domain, "vanilla aggregation on empty query");
    require(layout.visual_len == grid.size(), ErrorClass::domain, "grid size mismatch");
    PatchDistribution dist;
    dist.grid = grid;
    dist.values.assign(std::size_t(layout.visual_len), 0.0);
    const int L = int(trace.query_attn.size());
    const int H = int(trace.query_attn.front().size());
    for (int l = 0; l < L; ++l)
        for (int h = 0; h < H; ++h) {
            const Tensor& rows = trace.query_attn[std::size_t(l)][std::size_t(h)];
            for (int i = 0; i < layout.query_len; ++i) {
                const double* r = rows.row_ptr(i);
                for (int j = 0; j < layout.visual_len; ++j) dist.values[std::size_t(j)] += r[j];
            }
        }
    double total = std::accumulate(dist.values.begin(), dist.values.end(), 0.0);
    require(total > 0.0, ErrorClass::domain, "vanilla aggregate: all-zero patch mass");
    for (double& v : dist.values) v /= total;
    return dist;
}

enum class ClickMode { argmax_center, neighborhood_centroid };

/// Click point for a patch distribution: center of the argmax patch, or the
/// mass-weighted centroid of its 3x3 neighborhood. Ties go to the lowest index.
inline Point predict_click(const PatchDistribution& dist,
                           ClickMode mode = ClickMode::argmax_center) {
    require(!dist.values.empty(), ErrorClass::domain, "empty distribution");
    int best = 0;
    for (int i = 1; i < int(dist.values.size()); ++i)
        if (dist.values[std::size_t(i)] > dist.values[std::size_t(best)]) best = i;
    if (mode == ClickMode::argmax_center) return patch_center(dist.grid, best);

    int br = dist.grid.row_of(best), bc = dist.grid.col_of(best);
    double wsum = 0.0, cx = 0.0, cy = 0.0;
    for (int dr = -1; dr <= 1; ++dr)
        for (int dc = -1; dc <= 1; ++dc) {
            int r = br + dr, c = bc + dc;
            if (r < 0 || r >= dist.grid.rows || c < 0 || c >= dist.grid.cols) continue;
            int i = dist.grid.index(r, c);
            double w = dist.values[std::size_t(i)];
            Point p = patch_center(dist.grid, i);
            wsum += w;
            cx += w * p.x;
            cy += w * p.y;
        }
    if (wsum <= 0.0) return patch_center(dist.grid, best);
    return {cx / wsum, cy / wsum};
}

}  // namespace aima
