#pragma once

#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Core>

#include "aima/rng.hpp"
#include "aima/tensor.hpp"

namespace aima {

struct ModelConfig {
    int layers = 4;
    int heads = 4;
    int dim = 64;
    int visual_vocab = 32;
    int text_vocab = 16;
    int max_rows = 14;
    int max_cols = 14;
    int max_query_len = 8;
    std::uint64_t seed = 0;

    // Pretrained-perception stand-in: visual ids >= visual_factor_base encode
    // attribute tuples (mixed radix, last factor fastest) and their embeddings
    // initialize as sums of per-attribute factor vectors; when the text vocab
    // is the concatenation of the same factors, text tokens start aligned with
    // them. Everything remains trainable; empty factors = plain random init.
    std::vector<int> visual_factors;
    int visual_factor_base = 2;
    bool tie_text_factors = false;

    int head_dim() const { return dim / heads; }
    int ffn_dim() const { return 4 * dim; }

    int factor_total() const {
        int n = 1;
        for (int f : visual_factors) n *= f;
        return n;
    }
    int factor_sum() const {
        int n = 0;
        for (int f : visual_factors) n += f;
        return n;
    }

    void validate() const {
        require(layers >= 1 && heads >= 1 && dim >= 1, ErrorClass::domain,
                "model dimensions must be >= 1");
        require(dim % heads == 0, ErrorClass::domain, "hidden width not divisible by head count");
        require(visual_vocab >= 1 && text_vocab >= 1, ErrorClass::domain, "empty vocabulary");
        require(max_rows >= 1 && max_cols >= 1 && max_query_len >= 0, ErrorClass::domain,
                "invalid sequence caps");
        if (!visual_factors.empty()) {
            for (int f : visual_factors)
                require(f >= 1, ErrorClass::domain, "factor dims must be >= 1");
            require(visual_factor_base >= 0 &&
                        visual_factor_base + factor_total() <= visual_vocab,
                    ErrorClass::domain, "factored ids exceed the visual vocabulary");
            if (tie_text_factors)
                require(factor_sum() <= text_vocab, ErrorClass::domain,
                        "factor tokens exceed the text vocabulary");
        }
    }
};

// reserved rows of the anchor embedding table
enum AnchorId { kAnchorStart = 0, kAnchor = 1, kAnchorEnd = 2, kAnchorCount = 3 };

/// Token order is [visual grid, query, anchor-start, anchor, anchor-end]; the
/// anchor sits after everything it must be able to attend to.
struct SequenceLayout {
    int visual_len = 0;
    int query_len = 0;

    int total() const { return visual_len + query_len + kAnchorCount; }
    int text_begin() const { return visual_len; }
    int text_end() const { return visual_len + query_len; }
    int anchor_pos() const { return visual_len + query_len + 1; }
};

/// Visual token grid with its (row,col) positions implied by the shape.
struct VisualInput {
    int rows = 0;
    int cols = 0;
    std::vector<int> ids;  // row-major, length rows*cols

    int len() const { return rows * cols; }
};

struct Model {
    ModelConfig config;
    std::vector<std::pair<std::string, Tensor>> params;  // fixed creation order
    std::unordered_map<std::string, int> index;

    Tensor& param(const std::string& name) {
        auto it = index.find(name);
        require(it != index.end(), ErrorClass::internal, "unknown parameter " + name);
        return params[std::size_t(it->second)].second;
    }
    const Tensor& param(const std::string& name) const {
        auto it = index.find(name);
        require(it != index.end(), ErrorClass::internal, "unknown parameter " + name);
        return params[std::size_t(it->second)].second;
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& [name, t] : params) n += t.size();
        return n;
    }
};

namespace detail {
inline void add_param(Model& m, const std::string& name, int rows, int cols, Rng& rng,
                      double scale) {
    Tensor t(rows, cols);
    if (scale > 0.0)
        for (double& v : t.data) v = scale * rng.next_normal();
    m.index.emplace(name, int(m.params.size()));
    m.params.emplace_back(name, std::move(t));
}

inline void add_const_param(Model& m, const std::string& name, int rows, int cols, double fill) {
    Tensor t(rows, cols, fill);
    m.index.emplace(name, int(m.params.size()));
    m.params.emplace_back(name, std::move(t));
}
}  // namespace detail

/// Deterministically seeded parameters; the anchor embedding rows are freshly
/// random like everything else.
inline Model init_model(const ModelConfig& config) {
    config.validate();
    Model m;
    m.config = config;
    Rng rng(config.seed * 0x9e3779b97f4a7c15ULL + 0x1234abcdULL);
    const int d = config.dim;
    const double s = 0.02;

    detail::add_param(m, "emb.visual", config.visual_vocab, d, rng, s);
    detail::add_param(m, "emb.text", config.text_vocab, d, rng, s);
    if (!config.visual_factors.empty()) {
        // factor vectors shared between the visual appearance ids and (when
        // tied) the text attribute tokens
        std::vector<std::vector<double>> factor_vecs;
        for (int f : config.visual_factors)
            for (int v = 0; v < f; ++v) {
                std::vector<double> vec(std::size_t(d), 0.0);
                for (double& x : vec) x = s * rng.next_normal();
                factor_vecs.push_back(std::move(vec));
            }
        Tensor& ev = m.param("emb.visual");
        const int nf = int(config.visual_factors.size());
        for (int idx = 0; idx < config.factor_total(); ++idx) {
            double* row = ev.row_ptr(config.visual_factor_base + idx);
            for (int j = 0; j < d; ++j) row[j] = 0.3 * s * rng.next_normal();
            int rest = idx, offset = config.factor_sum();
            for (int f = nf - 1; f >= 0; --f) {
                int dim_f = config.visual_factors[std::size_t(f)];
                int value = rest % dim_f;
                rest /= dim_f;
                offset -= dim_f;
                const std::vector<double>& vec = factor_vecs[std::size_t(offset + value)];
                for (int j = 0; j < d; ++j) row[j] += vec[j];
            }
        }
        if (config.tie_text_factors) {
            Tensor& et = m.param("emb.text");
            for (int t = 0; t < config.factor_sum(); ++t) {
                double* row = et.row_ptr(t);
                const std::vector<double>& vec = factor_vecs[std::size_t(t)];
                for (int j = 0; j < d; ++j) row[j] = vec[j] + 0.3 * s * rng.next_normal();
            }
        }
    }
    detail::add_param(m, "emb.anchor", kAnchorCount, d, rng, s);
    detail::add_param(m, "emb.row", config.max_rows, d, rng, s);
    detail::add_param(m, "emb.col", config.max_cols, d, rng, s);
    detail::add_param(m, "emb.pos", config.max_query_len + kAnchorCount, d, rng, s);

    for (int l = 0; l < config.layers; ++l) {
        std::string p = "layers." + std::to_string(l) + ".";
        detail::add_const_param(m, p + "ln1.gamma", 1, d, 1.0);
        detail::add_const_param(m, p + "ln1.beta", 1, d, 0.0);
        detail::add_param(m, p + "attn.wq", d, d, rng, s);
        detail::add_const_param(m, p + "attn.bq", 1, d, 0.0);
        detail::add_param(m, p + "attn.wk", d, d, rng, s);
        detail::add_const_param(m, p + "attn.bk", 1, d, 0.0);
        {
            // first half of the heads start as similarity heads: W_q and W_k
            // share one random projection, so their attention begins as
            // embedding similarity. Stands in for the pretrained backbone's
            // native query-visual attention; trained like everything else.
            Tensor& wq = m.param(p + "attn.wq");
            Tensor& wk = m.param(p + "attn.wk");
            const int dh = config.head_dim();
            const double sim_scale = std::sqrt(3.0 / (std::sqrt(double(dh)) * d));
            for (int h = 0; h < config.heads / 2; ++h)
                for (int i = 0; i < d; ++i)
                    for (int j = h * dh; j < (h + 1) * dh; ++j)
                        wq.at(i, j) = wk.at(i, j) = sim_scale * rng.next_normal();
        }
        detail::add_param(m, p + "attn.wv", d, d, rng, s);
        detail::add_const_param(m, p + "attn.bv", 1, d, 0.0);
        detail::add_param(m, p + "attn.wo", d, d, rng, s);
        detail::add_const_param(m, p + "attn.bo", 1, d, 0.0);
        detail::add_const_param(m, p + "ln2.gamma", 1, d, 1.0);
        detail::add_const_param(m, p + "ln2.beta", 1, d, 0.0);
        detail::add_param(m, p + "ffn.w1", d, config.ffn_dim(), rng, s);
        detail::add_const_param(m, p + "ffn.b1", 1, config.ffn_dim(), 0.0);
        detail::add_param(m, p + "ffn.w2", config.ffn_dim(), d, rng, s);
        detail::add_const_param(m, p + "ffn.b2", 1, d, 0.0);
    }
    return m;
}

/// Per-layer/head attention rows restricted to the visual positions, plus all
/// intermediate hidden states H^0..H^L. query_attn is only present when the
/// forward was asked for it (or after a partial recomputation requested it).
struct ForwardTrace {
    SequenceLayout layout;
    std::vector<Tensor> hidden;                            // L+1 tensors [T,d]
    std::vector<std::vector<std::vector<double>>> anchor_attn;  // [L][H] -> |V|
    std::vector<std::vector<Tensor>> query_attn;           // [L][H] -> [|Q|,|V|]
    std::vector<std::vector<Tensor>> full_attn;            // [L][H] -> [T,T], debug only

    bool has_query_rows() const { return !query_attn.empty(); }
    bool has_anchor_rows() const { return !anchor_attn.empty(); }
};

enum class ForwardMode {
    eager,       // materialize attention rows for anchor (and query, if asked)
    fast,        // hidden states only; rows come from anchor_rows_partial
};

struct ForwardOptions {
    ForwardMode mode = ForwardMode::eager;
    bool query_rows = false;      // also extract A_{q_i,V} rows
    bool keep_full_attention = false;  // debug: retain [T,T] matrices
};

namespace detail {

inline void layer_norm_row(const double* x, const double* gamma, const double* beta, int n,
                           double* out) {
    double mu = 0.0;
    for (int c = 0; c < n; ++c) mu += x[c];
    mu /= n;
    double var = 0.0;
    for (int c = 0; c < n; ++c) var += (x[c] - mu) * (x[c] - mu);
    var /= n;
    double is = 1.0 / std::sqrt(var + 1e-5);
    for (int c = 0; c < n; ++c) out[c] = (x[c] - mu) * is * gamma[c] + beta[c];
}

inline void linear(const Tensor& x, const Tensor& w, const Tensor& b, Tensor& out) {
    using CMap =
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    out = Tensor(x.rows, w.cols);
    Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>> o(
        out.data.data(), out.rows, out.cols);
    o.noalias() = CMap(x.data.data(), x.rows, x.cols) * CMap(w.data.data(), w.rows, w.cols);
    o.rowwise() += Eigen::Map<const Eigen::RowVectorXd>(b.data.data(), b.cols);
}

inline double gelu_scalar(double v) { return 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2)); }

/// softmax over s[0..lim) into p, zeros beyond.
inline void softmax_row(const double* s, int lim, int n, double* p) {
    double mx = s[0];
    for (int c = 1; c < lim; ++c) mx = std::max(mx, s[c]);
    double z = 0.0;
    for (int c = 0; c < lim; ++c) {
        p[c] = std::exp(s[c] - mx);
        z += p[c];
    }
    for (int c = 0; c < lim; ++c) p[c] /= z;
    for (int c = lim; c < n; ++c) p[c] = 0.0;
}

}  // namespace detail

inline SequenceLayout make_layout(const Model& model, const VisualInput& visual,
                                  const std::vector<int>& query) {
    const ModelConfig& cfg = model.config;
    require(visual.rows >= 1 && visual.cols >= 1, ErrorClass::domain, "empty visual grid");
    require(visual.rows <= cfg.max_rows && visual.cols <= cfg.max_cols, ErrorClass::domain,
            "visual grid exceeds model caps");
    require(int(visual.ids.size()) == visual.len(), ErrorClass::domain, "visual grid size mismatch");
    require(int(query.size()) <= cfg.max_query_len, ErrorClass::domain, "query too long");
    for (int id : visual.ids)
        require(id >= 0 && id < cfg.visual_vocab, ErrorClass::domain, "visual id out of vocabulary");
    for (int id : query)
        require(id >= 0 && id < cfg.text_vocab, ErrorClass::domain, "text id out of vocabulary");
    SequenceLayout layout;
    layout.visual_len = visual.len();
    layout.query_len = int(query.size());
    return layout;
}

/// Embeds the sequence: visual tokens get content + 2-D position, text/anchor
/// tokens get content + absolute segment position.
inline Tensor embed_sequence(const Model& model, const VisualInput& visual,
                             const std::vector<int>& query, const SequenceLayout& layout) {
    const int d = model.config.dim;
    Tensor x(layout.total(), d);
    const Tensor& ev = model.param("emb.visual");
    const Tensor& et = model.param("emb.text");
    const Tensor& ea = model.param("emb.anchor");
    const Tensor& er = model.param("emb.row");
    const Tensor& ec = model.param("emb.col");
    const Tensor& ep = model.param("emb.pos");

    for (int i = 0; i < layout.visual_len; ++i) {
        int r = i / visual.cols, c = i % visual.cols;
        const double* e1 = ev.row_ptr(visual.ids[std::size_t(i)]);
        const double* e2 = er.row_ptr(r);
        const double* e3 = ec.row_ptr(c);
        double* o = x.row_ptr(i);
        for (int j = 0; j < d; ++j) o[j] = e1[j] + e2[j] + e3[j];
    }
    for (int i = 0; i < layout.query_len; ++i) {
        const double* e1 = et.row_ptr(query[std::size_t(i)]);
        const double* e2 = ep.row_ptr(i);
        double* o = x.row_ptr(layout.text_begin() + i);
        for (int j = 0; j < d; ++j) o[j] = e1[j] + e2[j];
    }
    for (int a = 0; a < kAnchorCount; ++a) {
        const double* e1 = ea.row_ptr(a);
        const double* e2 = ep.row_ptr(layout.query_len + a);
        double* o = x.row_ptr(layout.text_end() + a);
        for (int j = 0; j < d; ++j) o[j] = e1[j] + e2[j];
    }
    return x;
}

/// Standard pre-norm causal transformer forward. In eager mode the attention
/// rows for the anchor (and optionally every query token) are materialized per
/// layer/head; in fast mode no attention matrix is kept and only the hidden
/// states are traced (the flash-style path).
inline ForwardTrace forward(const Model& model, const VisualInput& visual,
                            const std::vector<int>& query, const ForwardOptions& opts = {}) {
    const ModelConfig& cfg = model.config;
    SequenceLayout layout = make_layout(model, visual, query);
    const int T = layout.total(), d = cfg.dim, H = cfg.heads, dh = cfg.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));
    const bool eager = opts.mode == ForwardMode::eager;

    ForwardTrace trace;
    trace.layout = layout;
    trace.hidden.reserve(std::size_t(cfg.layers) + 1);
    trace.hidden.push_back(embed_sequence(model, visual, query, layout));
    if (eager) {
        trace.anchor_attn.assign(std::size_t(cfg.layers), {});
        if (opts.query_rows) trace.query_attn.assign(std::size_t(cfg.layers), {});
        if (opts.keep_full_attention) trace.full_attn.assign(std::size_t(cfg.layers), {});
    }

    Tensor xn(T, d), q, k, v, ctx(T, d), attn_out, f1, f2;
    std::vector<double> prow(std::size_t(T), 0.0);
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = "layers." + std::to_string(l) + ".";
        Tensor x = trace.hidden.back();  // copy; becomes hidden[l+1]

        const Tensor& g1 = model.param(p + "ln1.gamma");
        const Tensor& b1 = model.param(p + "ln1.beta");
        for (int r = 0; r < T; ++r)
            detail::layer_norm_row(x.row_ptr(r), g1.data.data(), b1.data.data(), d, xn.row_ptr(r));

        detail::linear(xn, model.param(p + "attn.wq"), model.param(p + "attn.bq"), q);
        detail::linear(xn, model.param(p + "attn.wk"), model.param(p + "attn.bk"), k);
        detail::linear(xn, model.param(p + "attn.wv"), model.param(p + "attn.bv"), v);

        if (eager) {
            trace.anchor_attn[std::size_t(l)].assign(std::size_t(H), {});
            if (opts.query_rows) trace.query_attn[std::size_t(l)].assign(std::size_t(H), {});
            if (opts.keep_full_attention) trace.full_attn[std::size_t(l)].assign(std::size_t(H), {});
        }
        ctx.fill(0.0);
        for (int h = 0; h < H; ++h) {
            const int c0 = h * dh;
            Tensor* full = nullptr;
            if (eager && opts.keep_full_attention) {
                trace.full_attn[std::size_t(l)][std::size_t(h)] = Tensor(T, T);
                full = &trace.full_attn[std::size_t(l)][std::size_t(h)];
            }
            Tensor qrows;
            if (eager && opts.query_rows)
                qrows = Tensor(layout.query_len, layout.visual_len);
            for (int i = 0; i < T; ++i) {
                const double* qi = q.row_ptr(i) + c0;
                for (int j = 0; j <= i; ++j)
                    prow[std::size_t(j)] = dot(qi, k.row_ptr(j) + c0, dh) * inv_sqrt_dh;
                detail::softmax_row(prow.data(), i + 1, T, prow.data());
                double* crow = ctx.row_ptr(i) + c0;
                for (int j = 0; j <= i; ++j) {
                    double pj = prow[std::size_t(j)];
                    if (pj == 0.0) continue;
                    const double* vj = v.row_ptr(j) + c0;
                    for (int c = 0; c < dh; ++c) crow[c] += pj * vj[c];
                }
                if (eager) {
                    if (i == layout.anchor_pos())
                        trace.anchor_attn[std::size_t(l)][std::size_t(h)] =
                            std::vector<double>(prow.begin(), prow.begin() + layout.visual_len);
                    if (opts.query_rows && i >= layout.text_begin() && i < layout.text_end())
                        std::copy_n(prow.data(), layout.visual_len,
                                    qrows.row_ptr(i - layout.text_begin()));
                    if (full) std::copy_n(prow.data(), T, full->row_ptr(i));
                }
            }
            if (eager && opts.query_rows)
                trace.query_attn[std::size_t(l)][std::size_t(h)] = std::move(qrows);
        }

        detail::linear(ctx, model.param(p + "attn.wo"), model.param(p + "attn.bo"), attn_out);
        for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += attn_out.data[i];

        const Tensor& g2 = model.param(p + "ln2.gamma");
        const Tensor& b2 = model.param(p + "ln2.beta");
        for (int r = 0; r < T; ++r)
            detail::layer_norm_row(x.row_ptr(r), g2.data.data(), b2.data.data(), d, xn.row_ptr(r));
        detail::linear(xn, model.param(p + "ffn.w1"), model.param(p + "ffn.b1"), f1);
        for (double& fv : f1.data) fv = detail::gelu_scalar(fv);
        detail::linear(f1, model.param(p + "ffn.w2"), model.param(p + "ffn.b2"), f2);
        for (std::size_t i = 0; i < x.size(); ++i) x.data[i] += f2.data[i];

        trace.hidden.push_back(std::move(x));
    }
    return trace;
}

struct PartialRowStats {
    std::size_t score_evals = 0;  // attention logits computed by the recompute
};

/// Recomputes only the text-token and anchor rows of every attention map from
/// the traced hidden states; fills trace.anchor_attn (and query_attn when
/// with_query_rows). Matches the eager rows to float accuracy because it runs
/// the same projections on the same layer inputs.
inline PartialRowStats anchor_rows_partial(const Model& model, ForwardTrace& trace,
                                           bool with_query_rows = false) {
    const ModelConfig& cfg = model.config;
    const SequenceLayout& layout = trace.layout;
    require(int(trace.hidden.size()) == cfg.layers + 1, ErrorClass::domain,
            "trace is missing cached hidden states");
    const int T = layout.total(), d = cfg.dim, H = cfg.heads, dh = cfg.head_dim();
    const double inv_sqrt_dh = 1.0 / std::sqrt(double(dh));
    const int r0 = layout.text_begin();  // recompute rows r0..T (text + anchors)

    PartialRowStats stats;
    trace.anchor_attn.assign(std::size_t(cfg.layers), {});
    if (with_query_rows) trace.query_attn.assign(std::size_t(cfg.layers), {});

    Tensor xn(T, d), q(T - r0, d), k;
    std::vector<double> prow(std::size_t(T), 0.0);
    for (int l = 0; l < cfg.layers; ++l) {
        std::string p = "layers." + std::to_string(l) + ".";
        const Tensor& x = trace.hidden[std::size_t(l)];
        const Tensor& g1 = model.param(p + "ln1.gamma");
        const Tensor& b1 = model.param(p + "ln1.beta");
        for (int r = 0; r < T; ++r)
            detail::layer_norm_row(x.row_ptr(r), g1.data.data(), b1.data.data(), d, xn.row_ptr(r));

        // queries only for the recomputed rows; keys for every position
        {
            const Tensor& wq = model.param(p + "attn.wq");
            const Tensor& bq = model.param(p + "attn.bq");
            q.fill(0.0);
            for (int i = r0; i < T; ++i) {
                const double* xr = xn.row_ptr(i);
                double* o = q.row_ptr(i - r0);
                for (int kk = 0; kk < d; ++kk) {
                    double a = xr[kk];
                    if (a == 0.0) continue;
                    const double* wr = wq.row_ptr(kk);
                    for (int j = 0; j < d; ++j) o[j] += a * wr[j];
                }
                for (int j = 0; j < d; ++j) o[j] += bq.data[std::size_t(j)];
            }
        }
        detail::linear(xn, model.param(p + "attn.wk"), model.param(p + "attn.bk"), k);

        trace.anchor_attn[std::size_t(l)].assign(std::size_t(H), {});
        if (with_query_rows) trace.query_attn[std::size_t(l)].assign(std::size_t(H), {});
        for (int h = 0; h < H; ++h) {
            const int c0 = h * dh;
            Tensor qrows;
            if (with_query_rows) qrows = Tensor(layout.query_len, layout.visual_len);
            for (int i = r0; i < T; ++i) {
                const bool is_anchor = i == layout.anchor_pos();
                const bool is_query = i < layout.text_end();
                if (!is_anchor && !(with_query_rows && is_query)) continue;
                const double* qi = q.row_ptr(i - r0) + c0;
                for (int j = 0; j <= i; ++j)
                    prow[std::size_t(j)] = dot(qi, k.row_ptr(j) + c0, dh) * inv_sqrt_dh;
                stats.score_evals += std::size_t(i) + 1;
                detail::softmax_row(prow.data(), i + 1, T, prow.data());
                if (is_anchor)
                    trace.anchor_attn[std::size_t(l)][std::size_t(h)] =
                        std::vector<double>(prow.begin(), prow.begin() + layout.visual_len);
                else
                    std::copy_n(prow.data(), layout.visual_len, qrows.row_ptr(i - r0));
            }
            if (with_query_rows) trace.query_attn[std::size_t(l)][std::size_t(h)] = std::move(qrows);
        }
    }
    return stats;
}

}  // namespace aima
