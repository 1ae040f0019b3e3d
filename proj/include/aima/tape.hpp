#pragma once

#include <cmath>
#include <functional>
#include <utility>
#include <vector>

#include <Eigen/Core>

#include "aima/tensor.hpp"

namespace aima {

struct Var {
    int i = -1;
    bool valid() const { return i >= 0; }
};

/// Reverse-mode tape over Tensor values. Each op appends one node holding the
/// forward value and a closure that scatters the node's gradient into its
/// parents. Built once per forward pass; nodes are replayed in reverse order.
///
/// With record=false only forward values are computed (used by the finite
/// difference oracle, which needs many cheap loss evaluations).
class Tape {
public:
    explicit Tape(bool record = true) : record_(record) {}

    const Tensor& val(Var v) const { return nodes_[std::size_t(v.i)].value; }
    Tensor& grad(Var v) { return ensure_grad(v.i); }
    bool recording() const { return record_; }

    Var leaf(const Tensor& t, bool needs_grad = true) {
        return push(Tensor(t), needs_grad, {});
    }
    Var constant(Tensor t) { return push(std::move(t), false, {}); }
    Var constant_scalar(double v) { return constant(Tensor::scalar(v)); }

    /// Value copy with no gradient flow.
    Var stop_gradient(Var x) { return constant(val(x)); }

    // ---- arithmetic ----------------------------------------------------

    Var add(Var a, Var b) {
        const Tensor &A = val(a), &B = val(b);
        require(A.same_shape(B), ErrorClass::internal, "add: shape mismatch");
        Tensor out = A;
        for (std::size_t i = 0; i < out.size(); ++i) out.data[i] += B.data[i];
        return push(std::move(out), needs(a) || needs(b), [this, a, b](const Tensor& g, int) {
            accumulate(a, g);
            accumulate(b, g);
        });
    }

    /// X + broadcast row b.
    Var add_rowvec(Var x, Var b) {
        const Tensor &X = val(x), &B = val(b);
        require(B.rows == 1 && B.cols == X.cols, ErrorClass::internal, "add_rowvec: shape");
        Tensor out = X;
        for (int r = 0; r < out.rows; ++r) {
            double* o = out.row_ptr(r);
            for (int c = 0; c < out.cols; ++c) o[c] += B.data[std::size_t(c)];
        }
        return push(std::move(out), needs(x) || needs(b), [this, x, b](const Tensor& g, int) {
            accumulate(x, g);
            if (wants(b)) {
                Tensor& gb = ensure_grad(b.i);
                for (int r = 0; r < g.rows; ++r) {
                    const double* gr = g.row_ptr(r);
                    for (int c = 0; c < g.cols; ++c) gb.data[std::size_t(c)] += gr[c];
                }
            }
        });
    }

    Var scale(Var x, double s) {
        Tensor out = val(x);
        for (double& v : out.data) v *= s;
        return push(std::move(out), needs(x), [this, x, s](const Tensor& g, int) {
            if (!wants(x)) return;
            Tensor& gx = ensure_grad(x.i);
            for (std::size_t i = 0; i < g.size(); ++i) gx.data[i] += s * g.data[i];
        });
    }

    // ---- matrix products -----------------------------------------------

    Var matmul(Var a, Var b) {
        const Tensor &A = val(a), &B = val(b);
        require(A.cols == B.rows, ErrorClass::internal, "matmul: inner dims");
        Tensor out(A.rows, B.cols);
        mm_nn(A, B, out);
        return push(std::move(out), needs(a) || needs(b), [this, a, b](const Tensor& g, int) {
            const Tensor &A = val(a), &B = val(b);
            if (wants(a)) mm_nt_acc(g, B, ensure_grad(a.i));  // dA += g * B^T
            if (wants(b)) mm_tn_acc(A, g, ensure_grad(b.i));  // dB += A^T * g
        });
    }

    /// A * B^T
    Var matmul_nt(Var a, Var b) {
        const Tensor &A = val(a), &B = val(b);
        require(A.cols == B.cols, ErrorClass::internal, "matmul_nt: inner dims");
        Tensor out(A.rows, B.rows);
        emap(out).noalias() = emap(A) * emap(B).transpose();
        return push(std::move(out), needs(a) || needs(b), [this, a, b](const Tensor& g, int) {
            const Tensor &A = val(a), &B = val(b);
            if (wants(a)) mm_nn_acc(g, B, ensure_grad(a.i));  // dA += g * B
            if (wants(b)) mm_tn_acc(g, A, ensure_grad(b.i));  // dB += g^T * A
        });
    }

    // ---- shape ops -------------------------------------------------------

    Var gather_rows(Var table, std::vector<int> ids) {
        const Tensor& T = val(table);
        Tensor out(int(ids.size()), T.cols);
        for (int r = 0; r < out.rows; ++r) {
            require(ids[std::size_t(r)] >= 0 && ids[std::size_t(r)] < T.rows, ErrorClass::domain,
                    "gather_rows: id out of vocabulary");
            std::copy_n(T.row_ptr(ids[std::size_t(r)]), T.cols, out.row_ptr(r));
        }
        return push(std::move(out), needs(table),
                    [this, table, ids = std::move(ids)](const Tensor& g, int) {
                        if (!wants(table)) return;
                        Tensor& gt = ensure_grad(table.i);
                        for (int r = 0; r < g.rows; ++r) {
                            double* dst = gt.row_ptr(ids[std::size_t(r)]);
                            const double* src = g.row_ptr(r);
                            for (int c = 0; c < g.cols; ++c) dst[c] += src[c];
                        }
                    });
    }

    Var concat_rows(const std::vector<Var>& parts) {
        int rows = 0, cols = val(parts.front()).cols;
        for (Var p : parts) rows += val(p).rows;
        Tensor out(rows, cols);
        int r0 = 0;
        bool ng = false;
        std::vector<std::pair<Var, int>> offsets;
        for (Var p : parts) {
            const Tensor& P = val(p);
            std::copy(P.data.begin(), P.data.end(), out.row_ptr(r0));
            offsets.emplace_back(p, r0);
            r0 += P.rows;
            ng = ng || needs(p);
        }
        return push(std::move(out), ng, [this, offsets = std::move(offsets)](const Tensor& g, int) {
            for (auto [p, off] : offsets) {
                if (!wants(p)) continue;
                Tensor& gp = ensure_grad(p.i);
                for (int r = 0; r < gp.rows; ++r) {
                    const double* src = g.row_ptr(off + r);
                    double* dst = gp.row_ptr(r);
                    for (int c = 0; c < gp.cols; ++c) dst[c] += src[c];
                }
            }
        });
    }

    Var concat_cols(const std::vector<Var>& parts) {
        int cols = 0, rows = val(parts.front()).rows;
        for (Var p : parts) cols += val(p).cols;
        Tensor out(rows, cols);
        int c0 = 0;
        bool ng = false;
        std::vector<std::pair<Var, int>> offsets;
        for (Var p : parts) {
            const Tensor& P = val(p);
            for (int r = 0; r < rows; ++r) std::copy_n(P.row_ptr(r), P.cols, out.row_ptr(r) + c0);
            offsets.emplace_back(p, c0);
            c0 += P.cols;
            ng = ng || needs(p);
        }
        return push(std::move(out), ng, [this, offsets = std::move(offsets)](const Tensor& g, int) {
            for (auto [p, off] : offsets) {
                if (!wants(p)) continue;
                Tensor& gp = ensure_grad(p.i);
                for (int r = 0; r < gp.rows; ++r) {
                    const double* src = g.row_ptr(r) + off;
                    double* dst = gp.row_ptr(r);
                    for (int c = 0; c < gp.cols; ++c) dst[c] += src[c];
                }
            }
        });
    }

    Var slice_rows(Var x, int r0, int r1) {
        const Tensor& X = val(x);
        Tensor out(r1 - r0, X.cols);
        std::copy_n(X.row_ptr(r0), out.size(), out.data.data());
        return push(std::move(out), needs(x), [this, x, r0](const Tensor& g, int) {
            if (!wants(x)) return;
            Tensor& gx = ensure_grad(x.i);
            for (int r = 0; r < g.rows; ++r) {
                const double* src = g.row_ptr(r);
                double* dst = gx.row_ptr(r0 + r);
                for (int c = 0; c < g.cols; ++c) dst[c] += src[c];
            }
        });
    }

    Var slice_cols(Var x, int c0, int c1) {
        const Tensor& X = val(x);
        Tensor out(X.rows, c1 - c0);
        for (int r = 0; r < X.rows; ++r) std::copy_n(X.row_ptr(r) + c0, c1 - c0, out.row_ptr(r));
        return push(std::move(out), needs(x), [this, x, c0](const Tensor& g, int) {
            if (!wants(x)) return;
            Tensor& gx = ensure_grad(x.i);
            for (int r = 0; r < g.rows; ++r) {
                const double* src = g.row_ptr(r);
                double* dst = gx.row_ptr(r) + c0;
                for (int c = 0; c < g.cols; ++c) dst[c] += src[c];
            }
        });
    }

    // ---- nonlinearities ---------------------------------------------------

    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
        const Tensor &X = val(x), &G = val(gamma), &B = val(beta);
        int n = X.cols;
        Tensor out(X.rows, n);
        Tensor xhat(X.rows, n);      // saved for backward
        std::vector<double> inv_sigma(std::size_t(X.rows));
        for (int r = 0; r < X.rows; ++r) {
            const double* xr = X.row_ptr(r);
            double mu = 0.0;
            for (int c = 0; c < n; ++c) mu += xr[c];
            mu /= n;
            double var = 0.0;
            for (int c = 0; c < n; ++c) var += (xr[c] - mu) * (xr[c] - mu);
            var /= n;
            double is = 1.0 / std::sqrt(var + eps);
            inv_sigma[std::size_t(r)] = is;
            double* h = xhat.row_ptr(r);
            double* o = out.row_ptr(r);
            for (int c = 0; c < n; ++c) {
                h[c] = (xr[c] - mu) * is;
                o[c] = h[c] * G.data[std::size_t(c)] + B.data[std::size_t(c)];
            }
        }
        return push(std::move(out), needs(x) || needs(gamma) || needs(beta),
                    [this, x, gamma, beta, xhat = std::move(xhat),
                     inv_sigma = std::move(inv_sigma)](const Tensor& g, int) {
                        const Tensor& G = val(gamma);
                        int n = xhat.cols;
                        if (wants(gamma) || wants(beta)) {
                            Tensor* gg = wants(gamma) ? &ensure_grad(gamma.i) : nullptr;
                            Tensor* gb = wants(beta) ? &ensure_grad(beta.i) : nullptr;
                            for (int r = 0; r < g.rows; ++r) {
                                const double* gr = g.row_ptr(r);
                                const double* h = xhat.row_ptr(r);
                                for (int c = 0; c < n; ++c) {
                                    if (gg) gg->data[std::size_t(c)] += gr[c] * h[c];
                                    if (gb) gb->data[std::size_t(c)] += gr[c];
                                }
                            }
                        }
                        if (!wants(x)) return;
                        Tensor& gx = ensure_grad(x.i);
                        for (int r = 0; r < g.rows; ++r) {
                            const double* gr = g.row_ptr(r);
                            const double* h = xhat.row_ptr(r);
                            double is = inv_sigma[std::size_t(r)];
                            double m1 = 0.0, m2 = 0.0;  // mean(dy*gamma), mean(dy*gamma*xhat)
                            for (int c = 0; c < n; ++c) {
                                double dy = gr[c] * G.data[std::size_t(c)];
                                m1 += dy;
                                m2 += dy * h[c];
                            }
                            m1 /= n;
                            m2 /= n;
                            double* gxr = gx.row_ptr(r);
                            for (int c = 0; c < n; ++c) {
                                double dy = gr[c] * G.data[std::size_t(c)];
                                gxr[c] += (dy - m1 - h[c] * m2) * is;
                            }
                        }
                    });
    }

    /// Row-wise softmax over positions <= row index; strictly-future entries
    /// stay exactly zero. Rows are offset by `row0` within the causal order,
    /// so slices of the full score matrix can be softmaxed too.
    Var causal_softmax(Var s, int row0 = 0) {
        const Tensor& S = val(s);
        Tensor out(S.rows, S.cols);
        for (int r = 0; r < S.rows; ++r) {
            int lim = std::min(S.cols, row0 + r + 1);
            const double* sr = S.row_ptr(r);
            double* o = out.row_ptr(r);
            double mx = sr[0];
            for (int c = 1; c < lim; ++c) mx = std::max(mx, sr[c]);
            double z = 0.0;
            for (int c = 0; c < lim; ++c) {
                o[c] = std::exp(sr[c] - mx);
                z += o[c];
            }
            for (int c = 0; c < lim; ++c) o[c] /= z;
            for (int c = lim; c < S.cols; ++c) o[c] = 0.0;
        }
        return push(std::move(out), needs(s), [this, s, row0](const Tensor& g, int self) {
            if (!wants(s)) return;
            const Tensor& P = nodes_[std::size_t(self)].value;
            Tensor& gs = ensure_grad(s.i);
            for (int r = 0; r < P.rows; ++r) {
                int lim = std::min(P.cols, row0 + r + 1);
                const double* pr = P.row_ptr(r);
                const double* gr = g.row_ptr(r);
                double acc = 0.0;
                for (int c = 0; c < lim; ++c) acc += gr[c] * pr[c];
                double* o = gs.row_ptr(r);
                for (int c = 0; c < lim; ++c) o[c] += pr[c] * (gr[c] - acc);
            }
        });
    }

    Var gelu(Var x) {
        const Tensor& X = val(x);
        Tensor out(X.rows, X.cols);
        for (std::size_t i = 0; i < X.size(); ++i) {
            double v = X.data[i];
            out.data[i] = 0.5 * v * (1.0 + std::erf(v * M_SQRT1_2));
        }
        return push(std::move(out), needs(x), [this, x](const Tensor& g, int) {
            if (!wants(x)) return;
            const Tensor& X = val(x);
            Tensor& gx = ensure_grad(x.i);
            constexpr double inv_sqrt_2pi = 0.3989422804014327;
            for (std::size_t i = 0; i < X.size(); ++i) {
                double v = X.data[i];
                double phi = 0.5 * (1.0 + std::erf(v * M_SQRT1_2));
                double pdf = inv_sqrt_2pi * std::exp(-0.5 * v * v);
                gx.data[i] += g.data[i] * (phi + v * pdf);
            }
        });
    }

    // ---- reductions and simplex ops ---------------------------------------

    /// Sum of X over the given rows restricted to columns [c0,c1).
    Var sum_rows_block(Var x, std::vector<int> rows, int c0, int c1) {
        const Tensor& X = val(x);
        double s = 0.0;
        for (int r : rows)
            for (int c = c0; c < c1; ++c) s += X.at(r, c);
        return push(Tensor::scalar(s), needs(x),
                    [this, x, rows = std::move(rows), c0, c1](const Tensor& g, int) {
                        if (!wants(x)) return;
                        Tensor& gx = ensure_grad(x.i);
                        for (int r : rows)
                            for (int c = c0; c < c1; ++c) gx.at(r, c) += g.data[0];
                    });
    }

    /// Per-row sums over columns [c0,c1) for rows [r0,r1) -> [1, r1-r0].
    Var row_sums_block(Var x, int r0, int r1, int c0, int c1) {
        const Tensor& X = val(x);
        Tensor out(1, r1 - r0);
        for (int r = r0; r < r1; ++r) {
            double s = 0.0;
            const double* xr = X.row_ptr(r);
            for (int c = c0; c < c1; ++c) s += xr[c];
            out.data[std::size_t(r - r0)] = s;
        }
        return push(std::move(out), needs(x), [this, x, r0, r1, c0, c1](const Tensor& g, int) {
            if (!wants(x)) return;
            Tensor& gx = ensure_grad(x.i);
            for (int r = r0; r < r1; ++r) {
                double gv = g.data[std::size_t(r - r0)];
                double* o = gx.row_ptr(r);
                for (int c = c0; c < c1; ++c) o[c] += gv;
            }
        });
    }

    /// Rows scaled to unit L2 norm; zero rows stay zero (their gradient is
    /// defined as zero as well).
    Var row_normalize(Var x) {
        const Tensor& X = val(x);
        Tensor out(X.rows, X.cols);
        std::vector<double> inv_norm(std::size_t(X.rows), 0.0);
        for (int r = 0; r < X.rows; ++r) {
            const double* xr = X.row_ptr(r);
            double n2 = dot(xr, xr, X.cols);
            double* o = out.row_ptr(r);
            if (n2 > 0.0) {
                double in = 1.0 / std::sqrt(n2);
                inv_norm[std::size_t(r)] = in;
                for (int c = 0; c < X.cols; ++c) o[c] = xr[c] * in;
            }
        }
        return push(std::move(out), needs(x),
                    [this, x, inv_norm = std::move(inv_norm)](const Tensor& g, int self) {
                        if (!wants(x)) return;
                        const Tensor& Y = nodes_[std::size_t(self)].value;
                        Tensor& gx = ensure_grad(x.i);
                        for (int r = 0; r < Y.rows; ++r) {
                            double in = inv_norm[std::size_t(r)];
                            if (in == 0.0) continue;
                            const double* yr = Y.row_ptr(r);
                            const double* gr = g.row_ptr(r);
                            double gy = dot(gr, yr, Y.cols);
                            double* o = gx.row_ptr(r);
                            for (int c = 0; c < Y.cols; ++c) o[c] += (gr[c] - yr[c] * gy) * in;
                        }
                    });
    }

    Var softmax_vec(Var v) {
        const Tensor& V = val(v);
        Tensor out(1, V.cols);
        double mx = V.data[0];
        for (double x : V.data) mx = std::max(mx, x);
        double z = 0.0;
        for (int c = 0; c < V.cols; ++c) {
            out.data[std::size_t(c)] = std::exp(V.data[std::size_t(c)] - mx);
            z += out.data[std::size_t(c)];
        }
        for (double& x : out.data) x /= z;
        return push(std::move(out), needs(v), [this, v](const Tensor& g, int self) {
            if (!wants(v)) return;
            const Tensor& P = nodes_[std::size_t(self)].value;
            Tensor& gv = ensure_grad(v.i);
            double acc = dot(g.data.data(), P.data.data(), P.cols);
            for (int c = 0; c < P.cols; ++c)
                gv.data[std::size_t(c)] += P.data[std::size_t(c)] * (g.data[std::size_t(c)] - acc);
        });
    }

    /// v / sum(v). Entries must be non-negative with a strictly positive sum.
    Var normalize_sum(Var v) {
        const Tensor& V = val(v);
        double s = 0.0;
        for (double x : V.data) s += x;
        require(s > 0.0, ErrorClass::domain, "normalize_sum: total mass is zero");
        Tensor out(1, V.cols);
        for (int c = 0; c < V.cols; ++c) out.data[std::size_t(c)] = V.data[std::size_t(c)] / s;
        return push(std::move(out), needs(v), [this, v, s](const Tensor& g, int self) {
            if (!wants(v)) return;
            const Tensor& Y = nodes_[std::size_t(self)].value;
            Tensor& gv = ensure_grad(v.i);
            double acc = dot(g.data.data(), Y.data.data(), Y.cols);
            for (int c = 0; c < Y.cols; ++c) gv.data[std::size_t(c)] += (g.data[std::size_t(c)] - acc) / s;
        });
    }

    /// max(v, 0) elementwise.
    Var clamp_min0(Var v) {
        Tensor out = val(v);
        for (double& x : out.data) x = std::max(x, 0.0);
        return push(std::move(out), needs(v), [this, v](const Tensor& g, int) {
            if (!wants(v)) return;
            const Tensor& V = val(v);
            Tensor& gv = ensure_grad(v.i);
            for (std::size_t i = 0; i < V.size(); ++i)
                if (V.data[i] > 0.0) gv.data[i] += g.data[i];
        });
    }

    /// Weighted sum of row vectors: sum_k w[k] * rows[k], w a [1,K] Var.
    Var weighted_sum_rows(const std::vector<Var>& rowvecs, Var w) {
        const Tensor& W = val(w);
        require(int(rowvecs.size()) == W.cols, ErrorClass::internal, "weighted_sum_rows: arity");
        int n = val(rowvecs.front()).cols;
        Tensor out(1, n);
        bool ng = needs(w);
        for (int k = 0; k < W.cols; ++k) {
            const Tensor& R = val(rowvecs[std::size_t(k)]);
            double wk = W.data[std::size_t(k)];
            for (int c = 0; c < n; ++c) out.data[std::size_t(c)] += wk * R.data[std::size_t(c)];
            ng = ng || needs(rowvecs[std::size_t(k)]);
        }
        return push(std::move(out), ng, [this, rowvecs, w](const Tensor& g, int) {
            const Tensor& W = val(w);
            for (int k = 0; k < W.cols; ++k) {
                Var rv = rowvecs[std::size_t(k)];
                const Tensor& R = val(rv);
                if (wants(rv)) {
                    Tensor& gr = ensure_grad(rv.i);
                    double wk = W.data[std::size_t(k)];
                    for (int c = 0; c < R.cols; ++c) gr.data[std::size_t(c)] += wk * g.data[std::size_t(c)];
                }
                if (wants(w))
                    ensure_grad(w.i).data[std::size_t(k)] += dot(g.data.data(), R.data.data(), R.cols);
            }
        });
    }

    /// KL(p || max(q,eps)) with fixed label p; terms with p_i = 0 contribute 0.
    Var kl_const_label(const std::vector<double>& p, Var q, double eps) {
        const Tensor& Q = val(q);
        require(int(p.size()) == Q.cols, ErrorClass::domain, "kl: length mismatch");
        double kl = 0.0;
        for (int i = 0; i < Q.cols; ++i) {
            double pi = p[std::size_t(i)];
            if (pi <= 0.0) continue;
            kl += pi * (std::log(pi) - std::log(std::max(Q.data[std::size_t(i)], eps)));
        }
        return push(Tensor::scalar(kl), needs(q), [this, p, q, eps](const Tensor& g, int) {
            if (!wants(q)) return;
            const Tensor& Q = val(q);
            Tensor& gq = ensure_grad(q.i);
            for (int i = 0; i < Q.cols; ++i) {
                double pi = p[std::size_t(i)];
                if (pi <= 0.0 || Q.data[std::size_t(i)] < eps) continue;
                gq.data[std::size_t(i)] -= g.data[0] * pi / Q.data[std::size_t(i)];
            }
        });
    }

    /// -KL(p || max(q,eps)) where both p and q are tape values. Gradient with
    /// respect to p_i is defined as 0 where p_i = 0.
    Var neg_kl(Var p, Var q, double eps) {
        const Tensor &P = val(p), &Q = val(q);
        require(P.cols == Q.cols, ErrorClass::internal, "neg_kl: length mismatch");
        double kl = 0.0;
        for (int i = 0; i < P.cols; ++i) {
            double pi = P.data[std::size_t(i)];
            if (pi <= 0.0) continue;
            kl += pi * (std::log(pi) - std::log(std::max(Q.data[std::size_t(i)], eps)));
        }
        return push(Tensor::scalar(-kl), needs(p) || needs(q), [this, p, q, eps](const Tensor& g, int) {
            const Tensor &P = val(p), &Q = val(q);
            for (int i = 0; i < P.cols; ++i) {
                double pi = P.data[std::size_t(i)];
                double qi = std::max(Q.data[std::size_t(i)], eps);
                if (wants(p) && pi > 0.0)
                    ensure_grad(p.i).data[std::size_t(i)] -= g.data[0] * (std::log(pi) - std::log(qi) + 1.0);
                if (wants(q) && pi > 0.0 && Q.data[std::size_t(i)] >= eps)
                    ensure_grad(q.i).data[std::size_t(i)] += g.data[0] * pi / qi;
            }
        });
    }

    Var add_scalars(const std::vector<Var>& vs) {
        double s = 0.0;
        bool ng = false;
        for (Var v : vs) {
            s += val(v).data[0];
            ng = ng || needs(v);
        }
        return push(Tensor::scalar(s), ng, [this, vs](const Tensor& g, int) {
            for (Var v : vs)
                if (wants(v)) ensure_grad(v.i).data[0] += g.data[0];
        });
    }

    // ---- backward ----------------------------------------------------------

    void backward(Var loss) {
        require(record_, ErrorClass::internal, "backward on a non-recording tape");
        require(val(loss).size() == 1, ErrorClass::internal, "backward expects a scalar loss");
        ensure_grad(loss.i).data[0] = 1.0;
        for (int i = loss.i; i >= 0; --i) {
            Node& n = nodes_[std::size_t(i)];
            if (!n.backward || n.grad.data.empty()) continue;
            n.backward(n.grad, i);
        }
    }

    std::size_t node_count() const { return nodes_.size(); }

private:
    using BackFn = std::function<void(const Tensor& grad, int self)>;

    struct Node {
        Tensor value;
        Tensor grad;  // empty until touched
        BackFn backward;
        bool needs_grad = false;
    };

    bool needs(Var v) const { return nodes_[std::size_t(v.i)].needs_grad; }
    bool wants(Var v) const { return record_ && needs(v); }

    Tensor& ensure_grad(int i) {
        Node& n = nodes_[std::size_t(i)];
        if (n.grad.data.empty()) n.grad = Tensor(n.value.rows, n.value.cols);
        return n.grad;
    }

    void accumulate(Var v, const Tensor& g) {
        if (!wants(v)) return;
        Tensor& gv = ensure_grad(v.i);
        for (std::size_t i = 0; i < g.size(); ++i) gv.data[i] += g.data[i];
    }

    Var push(Tensor value, bool needs_grad, BackFn bw) {
        Node n;
        n.value = std::move(value);
        n.needs_grad = needs_grad;
        if (record_) n.backward = std::move(bw);
        nodes_.push_back(std::move(n));
        return Var{int(nodes_.size()) - 1};
    }

    using EMap = Eigen::Map<Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
    using CEMap =
        Eigen::Map<const Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

    static CEMap emap(const Tensor& t) { return CEMap(t.data.data(), t.rows, t.cols); }
    static EMap emap(Tensor& t) { return EMap(t.data.data(), t.rows, t.cols); }

    // C = A*B
    static void mm_nn(const Tensor& A, const Tensor& B, Tensor& C) {
        emap(C).noalias() = emap(A) * emap(B);
    }
    // C += A*B
    static void mm_nn_acc(const Tensor& A, const Tensor& B, Tensor& C) {
        emap(C).noalias() += emap(A) * emap(B);
    }
    // C += A*B^T
    static void mm_nt_acc(const Tensor& A, const Tensor& B, Tensor& C) {
        emap(C).noalias() += emap(A) * emap(B).transpose();
    }
    // C += A^T*B
    static void mm_tn_acc(const Tensor& A, const Tensor& B, Tensor& C) {
        emap(C).noalias() += emap(A).transpose() * emap(B);
    }

    bool record_;
    std::vector<Node> nodes_;
};

}  // namespace aima
