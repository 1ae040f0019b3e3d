#pragma once

#include <optional>
#include <string>
#include <vector>

#include "aima/grounding.hpp"
#include "aima/labeling.hpp"
#include "aima/model.hpp"
#include "aima/tape.hpp"

namespace aima {

/// How the differentiable grounding head is assembled on the tape.
struct GraphConfig {
    Strategy strategy = Strategy::sink;
    SinkMode sink_mode = SinkMode::global;
    int sink_k = 1;
    bool weight_grad = true;  // false: stop-gradient through the head weights
    // test hook: pin the head weights to fixed values instead of computing them
    const std::vector<double>* frozen_head_weights = nullptr;
};

struct GraphOutputs {
    Var prediction;            // [1,|V|] patch distribution
    Var loss;                  // scalar KL, only when a label was given
    Var head_w;                // [1,L*H]; invalid for the vanilla strategy
    std::vector<Var> hidden;   // L+1 vars [T,d]
    SequenceLayout layout;
};

/// Registers every model parameter as a tape leaf, in parameter order.
inline std::vector<Var> register_params(Tape& tape, const Model& model) {
    std::vector<Var> vars;
    vars.reserve(model.params.size());
    for (const auto& [name, t] : model.params) vars.push_back(tape.leaf(t));
    return vars;
}

namespace detail {

struct ParamLookup {
    const Model& model;
    const std::vector<Var>& vars;
    Var operator()(const std::string& name) const {
        auto it = model.index.find(name);
        require(it != model.index.end(), ErrorClass::internal, "unknown parameter " + name);
        return vars[std::size_t(it->second)];
    }
};

inline Var linear(Tape& t, Var x, Var w, Var b) { return t.add_rowvec(t.matmul(x, w), b); }

}  // namespace detail

/// Builds the full differentiable pipeline: embed -> L pre-norm blocks ->
/// head weighting -> anchored (or vanilla) aggregation -> optional KL loss.
/// The tape versions of every quantity match the plain-forward path values.
inline GraphOutputs build_grounding_graph(Tape& tape, const Model& model,
                                          const std::vector<Var>& params,
                                          const VisualInput& visual, const std::vector<int>& query,
                                          const GroundingLabel* label, const GraphConfig& cfg) {
    const ModelConfig& mc = model.config;
    SequenceLayout layout = make_layout(model, visual, query);
    const int T = layout.total(), H = mc.heads, dh = mc.head_dim(), L = mc.layers;
    detail::ParamLookup P{model, params};

    // ---- embeddings ----
    std::vector<int> vis_ids = visual.ids;
    std::vector<int> row_ids(std::size_t(layout.visual_len)), col_ids(std::size_t(layout.visual_len));
    for (int i = 0; i < layout.visual_len; ++i) {
        row_ids[std::size_t(i)] = i / visual.cols;
        col_ids[std::size_t(i)] = i % visual.cols;
    }
    Var xv = tape.add(tape.add(tape.gather_rows(P("emb.visual"), vis_ids),
                               tape.gather_rows(P("emb.row"), row_ids)),
                      tape.gather_rows(P("emb.col"), col_ids));
    std::vector<Var> parts{xv};
    std::vector<int> seg_pos;
    if (!query.empty()) {
        for (int i = 0; i < layout.query_len; ++i) seg_pos.push_back(i);
        parts.push_back(tape.add(tape.gather_rows(P("emb.text"), query),
                                 tape.gather_rows(P("emb.pos"), seg_pos)));
    }
    std::vector<int> anchor_pos_ids;
    for (int a = 0; a < kAnchorCount; ++a) anchor_pos_ids.push_back(layout.query_len + a);
    parts.push_back(tape.add(tape.gather_rows(P("emb.anchor"), {kAnchorStart, kAnchor, kAnchorEnd}),
                             tape.gather_rows(P("emb.pos"), anchor_pos_ids)));
    Var x = tape.concat_rows(parts);

    // ---- transformer blocks ----
    GraphOutputs out;
    out.layout = layout;
    out.hidden.push_back(x);
    std::vector<std::vector<Var>> attn(static_cast<std::size_t>(L));  // per layer/head probability matrices
    const double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));
    for (int l = 0; l < L; ++l) {
        std::string p = "layers." + std::to_string(l) + ".";
        Var xn = tape.layer_norm(x, P(p + "ln1.gamma"), P(p + "ln1.beta"));
        Var q = detail::linear(tape, xn, P(p + "attn.wq"), P(p + "attn.bq"));
        Var k = detail::linear(tape, xn, P(p + "attn.wk"), P(p + "attn.bk"));
        Var v = detail::linear(tape, xn, P(p + "attn.wv"), P(p + "attn.bv"));
        std::vector<Var> ctx_parts;
        attn[std::size_t(l)].reserve(std::size_t(H));
        for (int h = 0; h < H; ++h) {
            Var qh = tape.slice_cols(q, h * dh, (h + 1) * dh);
            Var kh = tape.slice_cols(k, h * dh, (h + 1) * dh);
            Var vh = tape.slice_cols(v, h * dh, (h + 1) * dh);
            Var scores = tape.scale(tape.matmul_nt(qh, kh), inv_sqrt_dh);
            Var probs = tape.causal_softmax(scores);
            attn[std::size_t(l)].push_back(probs);
            ctx_parts.push_back(tape.matmul(probs, vh));
        }
        Var ctx = tape.concat_cols(ctx_parts);
        x = tape.add(x, detail::linear(tape, ctx, P(p + "attn.wo"), P(p + "attn.bo")));
        Var xm = tape.layer_norm(x, P(p + "ln2.gamma"), P(p + "ln2.beta"));
        Var f = detail::linear(tape, tape.gelu(detail::linear(tape, xm, P(p + "ffn.w1"), P(p + "ffn.b1"))),
                                P(p + "ffn.w2"), P(p + "ffn.b2"));
        x = tape.add(x, f);
        out.hidden.push_back(x);
    }

    const int tb = layout.text_begin(), te = layout.text_end(), ap = layout.anchor_pos();
    const int V = layout.visual_len, Q = layout.query_len;

    auto visual_row = [&](int l, int h, int seq_row) {
        Var r = tape.slice_rows(attn[std::size_t(l)][std::size_t(h)], seq_row, seq_row + 1);
        return tape.slice_cols(r, 0, V);
    };

    // ---- aggregation ----
    if (cfg.strategy == Strategy::vanilla) {
        require(Q >= 1, ErrorClass::domain, "vanilla aggregation on empty query");
        std::vector<Var> rows;
        rows.reserve(std::size_t(L * H * Q));
        for (int l = 0; l < L; ++l)
            for (int h = 0; h < H; ++h)
                for (int qi = 0; qi < Q; ++qi) rows.push_back(visual_row(l, h, tb + qi));
        Var uniform = tape.constant(Tensor(1, L * H * Q, 1.0 / double(L * H * Q)));
        out.prediction = tape.normalize_sum(tape.weighted_sum_rows(rows, uniform));
    } else {
        // per-layer query-visual cosine mass (Eq. 7 path), built on the tape so
        // gradients can flow through the soft weighting
        std::vector<Var> layer_cos(static_cast<std::size_t>(L));
        Var summed_cos;
        const bool needs_cos = cfg.strategy == Strategy::sink || cfg.strategy == Strategy::soft;
        if (needs_cos && !cfg.frozen_head_weights) {
            require(Q >= 1, ErrorClass::domain, "strategy requires a non-empty query");
            for (int l = 0; l < L; ++l) {
                Var hl = out.hidden[std::size_t(l) + 1];
                Var nq = tape.row_normalize(tape.slice_rows(hl, tb, te));
                Var nv = tape.row_normalize(tape.slice_rows(hl, 0, V));
                Var cosm = tape.matmul_nt(nq, nv);
                layer_cos[std::size_t(l)] = tape.row_sums_block(cosm, 0, Q, 0, V);
                summed_cos = l == 0 ? layer_cos[0]
                                    : tape.add(summed_cos, layer_cos[std::size_t(l)]);
            }
        }

        Var w;
        if (cfg.frozen_head_weights) {
            w = tape.constant(Tensor::row(*cfg.frozen_head_weights));
        } else {
            std::vector<Var> raw(static_cast<std::size_t>(L * H));
            switch (cfg.strategy) {
                case Strategy::uniform:
                    for (auto& r : raw) r = tape.constant_scalar(0.0);
                    break;
                case Strategy::anchor:
                    for (int l = 0; l < L; ++l)
                        for (int h = 0; h < H; ++h)
                            raw[std::size_t(l * H + h)] =
                                tape.sum_rows_block(attn[std::size_t(l)][std::size_t(h)], {ap}, 0, V);
                    break;
                case Strategy::all_query: {
                    std::vector<int> qrows;
                    for (int qi = 0; qi < Q; ++qi) qrows.push_back(tb + qi);
                    for (int l = 0; l < L; ++l)
                        for (int h = 0; h < H; ++h)
                            raw[std::size_t(l * H + h)] =
                                tape.sum_rows_block(attn[std::size_t(l)][std::size_t(h)], qrows, 0, V);
                    break;
                }
                case Strategy::sink: {
                    // top-K selection reads concrete values; the indices are
                    // treated as constants of the differentiable graph
                    SinkScores scores;
                    scores.per_layer.resize(std::size_t(L));
                    for (int l = 0; l < L; ++l)
                        scores.per_layer[std::size_t(l)] = tape.val(layer_cos[std::size_t(l)]).data;
                    scores.summed = tape.val(summed_cos).data;
                    SinkSelection sel = select_sinks(scores, cfg.sink_mode, cfg.sink_k);
                    for (int l = 0; l < L; ++l) {
                        std::vector<int> qrows;
                        for (int qi : sel.indices_for_layer(l)) qrows.push_back(tb + qi);
                        for (int h = 0; h < H; ++h)
                            raw[std::size_t(l * H + h)] =
                                tape.sum_rows_block(attn[std::size_t(l)][std::size_t(h)], qrows, 0, V);
                    }
                    break;
                }
                case Strategy::soft: {
                    Var clamped = tape.clamp_min0(summed_cos);
                    double mass = 0.0;
                    for (double c : tape.val(clamped).data) mass += c;
                    // all-nonpositive cosine mass falls back to the uniform
                    // profile, matching normalize_nonneg
                    Var dg = mass > 0.0 ? tape.normalize_sum(clamped)
                                        : tape.constant(Tensor(1, Q, 1.0 / double(Q)));
                    for (int l = 0; l < L; ++l)
                        for (int h = 0; h < H; ++h) {
                            Var sums = tape.row_sums_block(attn[std::size_t(l)][std::size_t(h)],
                                                           tb, te, 0, V);
                            Var dhd = tape.normalize_sum(sums);
                            raw[std::size_t(l * H + h)] = tape.neg_kl(dg, dhd, kKlEps);
                        }
                    break;
                }
                default:
                    fail_domain("unsupported strategy in graph");
            }
            w = tape.softmax_vec(tape.concat_cols(raw));
            if (!cfg.weight_grad) w = tape.stop_gradient(w);
        }
        out.head_w = w;

        std::vector<Var> anchor_rows;
        anchor_rows.reserve(std::size_t(L * H));
        for (int l = 0; l < L; ++l)
            for (int h = 0; h < H; ++h) anchor_rows.push_back(visual_row(l, h, ap));
        Var mixed = tape.scale(tape.weighted_sum_rows(anchor_rows, w), 1.0 / double(L * H));
        out.prediction = tape.normalize_sum(mixed);
    }

    if (label) {
        require(int(label->values.size()) == V, ErrorClass::domain,
                "label length does not match the visual grid");
        out.loss = tape.kl_const_label(label->values, out.prediction, kKlEps);
    }
    return out;
}

}  // namespace aima
