#pragma once

// Reverse-mode automatic differentiation over dense 2-D tensors. A Tape
// owns the activations and a list of backward closures recorded in forward
// order; backward() replays them in reverse. All loops have fixed iteration
// and summation order, so gradients are bitwise reproducible.
//
// Primitives: matmul (plain and B-transposed), add, row-broadcast add,
// embedding gather (+ positions), layer normalization, tanh-approximated
// GELU, causally masked softmax, fused causal multi-head attention, and
// summed cross-entropy over logits.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <limits>
#include <memory>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "relex/common.hpp"
#include "relex/matrix.hpp"

namespace relex {

template <class Real>
struct Tensor {
    int rows = 0;
    int cols = 0;
    std::vector<Real> v;
    std::vector<Real> g;
    bool requires_grad = false;
    bool on_tape = false;

    Tensor() = default;
    Tensor(int r, int c, bool rg = false)
        : rows(r), cols(c), v(static_cast<std::size_t>(r) * c, Real(0)), requires_grad(rg) {
        if (rg) g.assign(v.size(), Real(0));
    }

    std::size_t size() const { return v.size(); }
    Real* row(int i) { return v.data() + static_cast<std::size_t>(i) * cols; }
    const Real* row(int i) const { return v.data() + static_cast<std::size_t>(i) * cols; }
    Real* grad_row(int i) { return g.data() + static_cast<std::size_t>(i) * cols; }
    Real& at(int i, int j) { return v[static_cast<std::size_t>(i) * cols + j]; }
    Real at(int i, int j) const { return v[static_cast<std::size_t>(i) * cols + j]; }

    void ensure_grad() {
        if (g.size() != v.size()) g.assign(v.size(), Real(0));
    }
    void zero_grad() { std::fill(g.begin(), g.end(), Real(0)); }

    Mat<Real> to_mat() const {
        Mat<Real> m(rows, cols);
        m.v = v;
        return m;
    }
    static Tensor from_mat(const Mat<Real>& m, bool rg = false) {
        Tensor t(m.rows, m.cols, rg);
        t.v = m.v;
        return t;
    }
};

template <class Real>
class Tape {
  public:
    explicit Tape(bool grad_enabled = true) : grad_(grad_enabled) {}

    bool grad_enabled() const { return grad_; }

    Tensor<Real>* alloc(int rows, int cols, bool requires_grad) {
        arena_.emplace_back(rows, cols, requires_grad && grad_);
        Tensor<Real>* t = &arena_.back();
        t->on_tape = true;
        return t;
    }

    // ---- primitives ------------------------------------------------------

    // X[b*L+t] = E[ids[b*L+t]] + P[t]
    Tensor<Real>* embed(Tensor<Real>* emb, Tensor<Real>* pos, std::span<const int> ids, int batch, int len) {
        if (static_cast<int>(ids.size()) != batch * len) throw ShapeError("embed: ids size mismatch");
        if (emb->cols != pos->cols) throw ShapeError("embed: embedding widths disagree");
        if (len > pos->rows) throw ShapeError("embed: sequence longer than positional table");
        const int d = emb->cols;
        Tensor<Real>* out = alloc(batch * len, d, emb->requires_grad || pos->requires_grad);
        for (int r = 0; r < batch * len; ++r) {
            int id = ids[r];
            if (id < 0 || id >= emb->rows) throw Error("embed: token id " + std::to_string(id) + " out of range");
            const Real* e = emb->row(id);
            const Real* p = pos->row(r % len);
            Real* o = out->row(r);
            for (int j = 0; j < d; ++j) o[j] = e[j] + p[j];
        }
        finish(out, "embed");
        if (grad_ && out->requires_grad) {
            std::vector<int> ids_copy(ids.begin(), ids.end());
            note_input(emb);
            note_input(pos);
            record([=, ids_copy = std::move(ids_copy)]() {
                for (int r = 0; r < batch * len; ++r) {
                    const Real* go = out->g.data() + static_cast<std::size_t>(r) * d;
                    if (emb->requires_grad) axpy(Real(1), go, emb->g.data() + static_cast<std::size_t>(ids_copy[r]) * d, d);
                    if (pos->requires_grad) axpy(Real(1), go, pos->g.data() + static_cast<std::size_t>(r % len) * d, d);
                }
            });
        }
        return out;
    }

    Tensor<Real>* matmul(Tensor<Real>* a, Tensor<Real>* b) {
        if (a->cols != b->rows) throw ShapeError("matmul: inner dimensions disagree");
        Tensor<Real>* out = alloc(a->rows, b->cols, a->requires_grad || b->requires_grad);
        mm(a->v.data(), b->v.data(), out->v.data(), a->rows, a->cols, b->cols);
        finish(out, "matmul");
        if (grad_ && out->requires_grad) {
            note_input(a);
            note_input(b);
            record([=, this]() {
                const int m = a->rows, k = a->cols, n = b->cols;
                if (a->requires_grad) {
                    // dA += dC * B^T, via a materialized transpose to keep the kernel streaming
                    std::vector<Real> bt(static_cast<std::size_t>(k) * n);
                    for (int i = 0; i < k; ++i)
                        for (int j = 0; j < n; ++j) bt[static_cast<std::size_t>(j) * k + i] = b->v[static_cast<std::size_t>(i) * n + j];
                    for (int i = 0; i < m; ++i) {
                        const Real* gout = out->g.data() + static_cast<std::size_t>(i) * n;
                        Real* ga = a->g.data() + static_cast<std::size_t>(i) * k;
                        for (int j = 0; j < n; ++j) axpy(gout[j], bt.data() + static_cast<std::size_t>(j) * k, ga, k);
                    }
                }
                if (b->requires_grad) {
                    for (int i = 0; i < m; ++i) {
                        const Real* ai = a->v.data() + static_cast<std::size_t>(i) * k;
                        const Real* gout = out->g.data() + static_cast<std::size_t>(i) * n;
                        for (int kk = 0; kk < k; ++kk) axpy(ai[kk], gout, b->g.data() + static_cast<std::size_t>(kk) * n, n);
                    }
                }
            });
        }
        return out;
    }

    // C = A * B^T; B given row-major as (n x k). Used for tied-embedding logits.
    Tensor<Real>* matmul_nt(Tensor<Real>* a, Tensor<Real>* b) {
        if (a->cols != b->cols) throw ShapeError("matmul_nt: inner dimensions disagree");
        const int m = a->rows, k = a->cols, n = b->rows;
        Tensor<Real>* out = alloc(m, n, a->requires_grad || b->requires_grad);
        {
            std::vector<Real> bt(static_cast<std::size_t>(k) * n);
            for (int i = 0; i < n; ++i)
                for (int j = 0; j < k; ++j) bt[static_cast<std::size_t>(j) * n + i] = b->v[static_cast<std::size_t>(i) * k + j];
            mm(a->v.data(), bt.data(), out->v.data(), m, k, n);
        }
        finish(out, "matmul_nt");
        if (grad_ && out->requires_grad) {
            note_input(a);
            note_input(b);
            record([=, this]() {
                if (a->requires_grad) {
                    for (int i = 0; i < m; ++i) {
                        const Real* gout = out->g.data() + static_cast<std::size_t>(i) * n;
                        Real* ga = a->g.data() + static_cast<std::size_t>(i) * k;
                        for (int j = 0; j < n; ++j) axpy(gout[j], b->v.data() + static_cast<std::size_t>(j) * k, ga, k);
                    }
                }
                if (b->requires_grad) {
                    for (int i = 0; i < m; ++i) {
                        const Real* ai = a->v.data() + static_cast<std::size_t>(i) * k;
                        const Real* gout = out->g.data() + static_cast<std::size_t>(i) * n;
                        for (int j = 0; j < n; ++j) axpy(gout[j], ai, b->g.data() + static_cast<std::size_t>(j) * k, k);
                    }
                }
            });
        }
        return out;
    }

    Tensor<Real>* add(Tensor<Real>* a, Tensor<Real>* b) {
        if (a->rows != b->rows || a->cols != b->cols) throw ShapeError("add: shape mismatch");
        Tensor<Real>* out = alloc(a->rows, a->cols, a->requires_grad || b->requires_grad);
        for (std::size_t i = 0; i < out->v.size(); ++i) out->v[i] = a->v[i] + b->v[i];
        finish(out, "add");
        if (grad_ && out->requires_grad) {
            note_input(a);
            note_input(b);
            record([=]() {
                if (a->requires_grad)
                    for (std::size_t i = 0; i < out->g.size(); ++i) a->g[i] += out->g[i];
                if (b->requires_grad)
                    for (std::size_t i = 0; i < out->g.size(); ++i) b->g[i] += out->g[i];
            });
        }
        return out;
    }

    // broadcast a 1 x n bias over every row
    Tensor<Real>* add_row(Tensor<Real>* a, Tensor<Real>* bias) {
        if (bias->rows != 1 || bias->cols != a->cols) throw ShapeError("add_row: bias shape mismatch");
        Tensor<Real>* out = alloc(a->rows, a->cols, a->requires_grad || bias->requires_grad);
        for (int i = 0; i < a->rows; ++i) {
            const Real* ai = a->row(i);
            Real* o = out->row(i);
            const Real* bb = bias->v.data();
            for (int j = 0; j < a->cols; ++j) o[j] = ai[j] + bb[j];
        }
        finish(out, "add_row");
        if (grad_ && out->requires_grad) {
            note_input(a);
            note_input(bias);
            record([=]() {
                if (a->requires_grad)
                    for (std::size_t i = 0; i < out->g.size(); ++i) a->g[i] += out->g[i];
                if (bias->requires_grad)
                    for (int i = 0; i < out->rows; ++i)
                        axpy(Real(1), out->g.data() + static_cast<std::size_t>(i) * out->cols, bias->g.data(), out->cols);
            });
        }
        return out;
    }

    Tensor<Real>* hadamard(Tensor<Real>* a, Tensor<Real>* b) {
        if (a->rows != b->rows || a->cols != b->cols) throw ShapeError("hadamard: shape mismatch");
        Tensor<Real>* out = alloc(a->rows, a->cols, a->requires_grad || b->requires_grad);
        for (std::size_t i = 0; i < out->v.size(); ++i) out->v[i] = a->v[i] * b->v[i];
        finish(out, "hadamard");
        if (grad_ && out->requires_grad) {
            note_input(a);
            note_input(b);
            record([=]() {
                if (a->requires_grad)
                    for (std::size_t i = 0; i < out->g.size(); ++i) a->g[i] += out->g[i] * b->v[i];
                if (b->requires_grad)
                    for (std::size_t i = 0; i < out->g.size(); ++i) b->g[i] += out->g[i] * a->v[i];
            });
        }
        return out;
    }

    Tensor<Real>* scale(Tensor<Real>* a, Real c) {
        Tensor<Real>* out = alloc(a->rows, a->cols, a->requires_grad);
        for (std::size_t i = 0; i < out->v.size(); ++i) out->v[i] = c * a->v[i];
        finish(out, "scale");
        if (grad_ && out->requires_grad) {
            note_input(a);
            record([=]() {
                for (std::size_t i = 0; i < out->g.size(); ++i) a->g[i] += c * out->g[i];
            });
        }
        return out;
    }

    Tensor<Real>* sum_all(Tensor<Real>* a) {
        Tensor<Real>* out = alloc(1, 1, a->requires_grad);
        Real s0 = 0, s1 = 0, s2 = 0, s3 = 0;
        std::size_t i = 0;
        for (; i + 4 <= a->v.size(); i += 4) {
            s0 += a->v[i];
            s1 += a->v[i + 1];
            s2 += a->v[i + 2];
            s3 += a->v[i + 3];
        }
        for (; i < a->v.size(); ++i) s0 += a->v[i];
        out->v[0] = (s0 + s1) + (s2 + s3);
        finish(out, "sum_all");
        if (grad_ && out->requires_grad) {
            note_input(a);
            record([=]() {
                Real go = out->g[0];
                for (std::size_t j = 0; j < a->g.size(); ++j) a->g[j] += go;
            });
        }
        return out;
    }

    Tensor<Real>* layer_norm(Tensor<Real>* x, Tensor<Real>* gain, Tensor<Real>* bias, Real eps = Real(1e-5)) {
        if (gain->rows != 1 || gain->cols != x->cols || bias->rows != 1 || bias->cols != x->cols)
            throw ShapeError("layer_norm: gain/bias shape mismatch");
        const int m = x->rows, n = x->cols;
        Tensor<Real>* out = alloc(m, n, x->requires_grad || gain->requires_grad || bias->requires_grad);
        auto xhat = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(m) * n);
        auto inv_std = std::make_shared<std::vector<Real>>(m);
        for (int i = 0; i < m; ++i) {
            const Real* xi = x->row(i);
            Real mu = 0;
            for (int j = 0; j < n; ++j) mu += xi[j];
            mu /= Real(n);
            Real var = 0;
            for (int j = 0; j < n; ++j) var += (xi[j] - mu) * (xi[j] - mu);
            var /= Real(n);
            Real is = Real(1) / std::sqrt(var + eps);
            (*inv_std)[i] = is;
            Real* xh = xhat->data() + static_cast<std::size_t>(i) * n;
            Real* o = out->row(i);
            for (int j = 0; j < n; ++j) {
                xh[j] = (xi[j] - mu) * is;
                o[j] = gain->v[j] * xh[j] + bias->v[j];
            }
        }
        finish(out, "layer_norm");
        if (grad_ && out->requires_grad) {
            note_input(x);
            note_input(gain);
            note_input(bias);
            record([=]() {
                for (int i = 0; i < m; ++i) {
                    const Real* go = out->g.data() + static_cast<std::size_t>(i) * n;
                    const Real* xh = xhat->data() + static_cast<std::size_t>(i) * n;
                    if (gain->requires_grad)
                        for (int j = 0; j < n; ++j) gain->g[j] += go[j] * xh[j];
                    if (bias->requires_grad)
                        for (int j = 0; j < n; ++j) bias->g[j] += go[j];
                    if (x->requires_grad) {
                        Real sum_dxhat = 0, sum_dxhat_xhat = 0;
                        for (int j = 0; j < n; ++j) {
                            Real dxh = go[j] * gain->v[j];
                            sum_dxhat += dxh;
                            sum_dxhat_xhat += dxh * xh[j];
                        }
                        Real is = (*inv_std)[i];
                        Real* gx = x->g.data() + static_cast<std::size_t>(i) * n;
                        for (int j = 0; j < n; ++j) {
                            Real dxh = go[j] * gain->v[j];
                            gx[j] += is * (dxh - (sum_dxhat + xh[j] * sum_dxhat_xhat) / Real(n));
                        }
                    }
                }
            });
        }
        return out;
    }

    Tensor<Real>* gelu(Tensor<Real>* x) {
        // tanh approximation, matching the GPT-2 lineage
        constexpr double kC = 0.7978845608028654;  // sqrt(2/pi)
        constexpr double kA = 0.044715;
        Tensor<Real>* out = alloc(x->rows, x->cols, x->requires_grad);
        for (std::size_t i = 0; i < x->v.size(); ++i) {
            double xv = static_cast<double>(x->v[i]);
            double t = std::tanh(kC * (xv + kA * xv * xv * xv));
            out->v[i] = static_cast<Real>(0.5 * xv * (1.0 + t));
        }
        finish(out, "gelu");
        if (grad_ && out->requires_grad) {
            note_input(x);
            record([=]() {
                for (std::size_t i = 0; i < x->g.size(); ++i) {
                    double xv = static_cast<double>(x->v[i]);
                    double inner = kC * (xv + kA * xv * xv * xv);
                    double t = std::tanh(inner);
                    double dinner = kC * (1.0 + 3.0 * kA * xv * xv);
                    double d = 0.5 * (1.0 + t) + 0.5 * xv * (1.0 - t * t) * dinner;
                    x->g[i] += out->g[i] * static_cast<Real>(d);
                }
            });
        }
        return out;
    }

    // Causally masked softmax over an L x L score matrix: row i is a
    // distribution over columns 0..i, zero beyond.
    Tensor<Real>* softmax_causal(Tensor<Real>* scores) {
        if (scores->rows != scores->cols) throw ShapeError("softmax_causal: scores must be square");
        const int n = scores->rows;
        Tensor<Real>* out = alloc(n, n, scores->requires_grad);
        for (int i = 0; i < n; ++i) {
            const Real* s = scores->row(i);
            Real* p = out->row(i);
            Real mx = s[0];
            for (int j = 1; j <= i; ++j) mx = std::max(mx, s[j]);
            Real z = 0;
            for (int j = 0; j <= i; ++j) {
                p[j] = std::exp(s[j] - mx);
                z += p[j];
            }
            for (int j = 0; j <= i; ++j) p[j] /= z;
        }
        finish(out, "softmax_causal");
        if (grad_ && out->requires_grad) {
            note_input(scores);
            record([=]() {
                for (int i = 0; i < n; ++i) {
                    const Real* p = out->v.data() + static_cast<std::size_t>(i) * n;
                    const Real* gp = out->g.data() + static_cast<std::size_t>(i) * n;
                    Real dotv = 0;
                    for (int j = 0; j <= i; ++j) dotv += p[j] * gp[j];
                    Real* gs = scores->g.data() + static_cast<std::size_t>(i) * n;
                    for (int j = 0; j <= i; ++j) gs[j] += p[j] * (gp[j] - dotv);
                }
            });
        }
        return out;
    }

    // Fused causal multi-head self-attention over a batch of equal-length
    // sequences laid out as (batch*len) x d. Softmax runs over j <= i only;
    // masked positions are never touched, so later tokens cannot leak in.
    Tensor<Real>* attention(Tensor<Real>* q, Tensor<Real>* k, Tensor<Real>* v, int n_heads, int batch, int len) {
        const int d = q->cols;
        if (k->cols != d || v->cols != d) throw ShapeError("attention: widths disagree");
        if (q->rows != batch * len || k->rows != batch * len || v->rows != batch * len)
            throw ShapeError("attention: rows disagree with batch*len");
        if (d % n_heads != 0) throw ShapeError("attention: heads must divide width");
        const int dh = d / n_heads;
        const Real scale = Real(1) / static_cast<Real>(std::sqrt(static_cast<double>(dh)));
        Tensor<Real>* out = alloc(batch * len, d, q->requires_grad || k->requires_grad || v->requires_grad);

        const bool keep = grad_ && out->requires_grad;
        auto probs = keep ? std::make_shared<std::vector<Real>>(
                                static_cast<std::size_t>(batch) * n_heads * len * len, Real(0))
                          : nullptr;
        std::vector<Real> srow(len);
        for (int b = 0; b < batch; ++b) {
            for (int h = 0; h < n_heads; ++h) {
                const int off = h * dh;
                for (int i = 0; i < len; ++i) {
                    const Real* qi = q->row(b * len + i) + off;
                    Real mx = -std::numeric_limits<Real>::infinity();
                    for (int j = 0; j <= i; ++j) {
                        srow[j] = scale * dot(qi, k->row(b * len + j) + off, dh);
                        mx = std::max(mx, srow[j]);
                    }
                    Real z = 0;
                    for (int j = 0; j <= i; ++j) {
                        srow[j] = std::exp(srow[j] - mx);
                        z += srow[j];
                    }
                    Real* o = out->row(b * len + i) + off;
                    Real* prow = keep ? probs->data() +
                                            (((static_cast<std::size_t>(b) * n_heads + h) * len + i) * len)
                                      : nullptr;
                    for (int j = 0; j <= i; ++j) {
                        Real p = srow[j] / z;
                        if (keep) prow[j] = p;
                        axpy(p, v->row(b * len + j) + off, o, dh);
                    }
                }
            }
        }
        finish(out, "attention");
        if (keep) {
            note_input(q);
            note_input(k);
            note_input(v);
            record([=, this]() {
                std::vector<Real> dp(len), ds(len);
                for (int b = 0; b < batch; ++b) {
                    for (int h = 0; h < n_heads; ++h) {
                        const int off = h * dh;
                        for (int i = 0; i < len; ++i) {
                            const Real* go = out->g.data() + static_cast<std::size_t>(b * len + i) * d + off;
                            const Real* prow = probs->data() +
                                               (((static_cast<std::size_t>(b) * n_heads + h) * len + i) * len);
                            Real sum_pd = 0;
                            for (int j = 0; j <= i; ++j) {
                                dp[j] = dot(go, v->v.data() + static_cast<std::size_t>(b * len + j) * d + off, dh);
                                sum_pd += prow[j] * dp[j];
                            }
                            for (int j = 0; j <= i; ++j) {
                                ds[j] = prow[j] * (dp[j] - sum_pd);
                                if (v->requires_grad)
                                    axpy(prow[j], go, v->g.data() + static_cast<std::size_t>(b * len + j) * d + off, dh);
                            }
                            if (q->requires_grad) {
                                Real* gq = q->g.data() + static_cast<std::size_t>(b * len + i) * d + off;
                                for (int j = 0; j <= i; ++j)
                                    axpy(scale * ds[j], k->v.data() + static_cast<std::size_t>(b * len + j) * d + off, gq, dh);
                            }
                            if (k->requires_grad) {
                                const Real* qi = q->v.data() + static_cast<std::size_t>(b * len + i) * d + off;
                                for (int j = 0; j <= i; ++j)
                                    axpy(scale * ds[j], qi, k->g.data() + static_cast<std::size_t>(b * len + j) * d + off, dh);
                            }
                        }
                    }
                }
            });
        }
        return out;
    }

    // Summed (not averaged) cross-entropy over rows with mask[i] != 0.
    // Callers divide by the token count at the accumulation boundary, which
    // keeps gradient accumulation exactly equivalent to one big batch.
    Tensor<Real>* cross_entropy_sum(Tensor<Real>* logits, std::span<const int> targets, std::span<const unsigned char> mask) {
        const int m = logits->rows, n = logits->cols;
        if (static_cast<int>(targets.size()) != m || static_cast<int>(mask.size()) != m)
            throw ShapeError("cross_entropy_sum: target/mask length mismatch");
        Tensor<Real>* out = alloc(1, 1, logits->requires_grad);
        const bool keep = grad_ && out->requires_grad;
        auto probs = keep ? std::make_shared<std::vector<Real>>(static_cast<std::size_t>(m) * n) : nullptr;
        Real total = 0;
        for (int i = 0; i < m; ++i) {
            if (!mask[i]) continue;
            int t = targets[i];
            if (t < 0 || t >= n) throw Error("cross_entropy_sum: target id out of range");
            const Real* x = logits->row(i);
            Real mx = x[0];
            for (int j = 1; j < n; ++j) mx = std::max(mx, x[j]);
            Real z = 0;
            for (int j = 0; j < n; ++j) z += std::exp(x[j] - mx);
            Real lse = mx + std::log(z);
            total += lse - x[t];
            if (keep) {
                Real* p = probs->data() + static_cast<std::size_t>(i) * n;
                for (int j = 0; j < n; ++j) p[j] = std::exp(x[j] - lse);
            }
        }
        out->v[0] = total;
        finish(out, "cross_entropy_sum");
        if (keep) {
            note_input(logits);
            std::vector<int> tcopy(targets.begin(), targets.end());
            std::vector<unsigned char> mcopy(mask.begin(), mask.end());
            record([=, tcopy = std::move(tcopy), mcopy = std::move(mcopy)]() {
                Real go = out->g[0];
                for (int i = 0; i < m; ++i) {
                    if (!mcopy[i]) continue;
                    const Real* p = probs->data() + static_cast<std::size_t>(i) * n;
                    Real* gl = logits->g.data() + static_cast<std::size_t>(i) * n;
                    for (int j = 0; j < n; ++j) gl[j] += go * p[j];
                    gl[tcopy[i]] -= go;
                }
            });
        }
        return out;
    }

    // ---- driver ----------------------------------------------------------

    void backward(Tensor<Real>* loss) {
        if (!grad_) throw Error("backward: tape was created with gradients disabled");
        if (loss->rows != 1 || loss->cols != 1) throw Error("backward: loss must be a scalar");
        if (!std::isfinite(static_cast<double>(loss->v[0]))) throw NumericError("backward: loss is not finite");
        loss->ensure_grad();
        loss->g[0] += Real(1);
        for (auto it = backsteps_.rbegin(); it != backsteps_.rend(); ++it) (*it)();
        for (const Tensor<Real>* t : external_inputs_) check_grad_finite(t);
        for (const Tensor<Real>& t : arena_) check_grad_finite(&t);
    }

    std::size_t num_ops() const { return backsteps_.size(); }

  private:
    bool grad_;
    std::deque<Tensor<Real>> arena_;
    std::vector<std::function<void()>> backsteps_;
    std::unordered_set<const Tensor<Real>*> external_inputs_;

    void record(std::function<void()> f) { backsteps_.push_back(std::move(f)); }

    void note_input(Tensor<Real>* t) {
        if (t->requires_grad) {
            t->ensure_grad();
            if (!t->on_tape) external_inputs_.insert(t);
        }
    }

    void finish(Tensor<Real>* out, const char* op) {
        for (Real x : out->v)
            if (!std::isfinite(static_cast<double>(x)))
                throw NumericError(std::string("non-finite value produced by ") + op);
    }

    void check_grad_finite(const Tensor<Real>* t) {
        for (Real x : t->g)
            if (!std::isfinite(static_cast<double>(x))) throw NumericError("non-finite gradient after backward");
    }
};

// ---------------------------------------------------------------------------
// Central finite differences, the gradient oracle.

struct FiniteDiffReport {
    double max_rel_error = 0.0;
    std::size_t checked = 0;
    std::vector<std::string> failures;  // "name[idx]: analytic=<a> numeric=<n> rel=<r>"

    bool pass(double tolerance) const { return failures.empty() && max_rel_error < tolerance; }
};

// Compares the analytic gradients already stored in `leaves` (caller runs
// forward+backward first) against central differences of `loss_fn`, which
// must re-evaluate the loss at the leaves' current values.
template <class Real>
FiniteDiffReport finite_difference_check(const std::function<double()>& loss_fn,
                                         const std::vector<std::pair<std::string, Tensor<Real>*>>& leaves,
                                         double step, double tolerance) {
    FiniteDiffReport report;
    for (const auto& [name, leaf] : leaves) {
        for (std::size_t i = 0; i < leaf->v.size(); ++i) {
            const Real saved = leaf->v[i];
            leaf->v[i] = static_cast<Real>(static_cast<double>(saved) + step);
            const double f_plus = loss_fn();
            leaf->v[i] = static_cast<Real>(static_cast<double>(saved) - step);
            const double f_minus = loss_fn();
            leaf->v[i] = saved;
            const double numeric = (f_plus - f_minus) / (2.0 * step);
            const double analytic = static_cast<double>(leaf->g[i]);
            const double rel = std::abs(analytic - numeric) /
                               std::max({std::abs(analytic), std::abs(numeric), 1e-8});
            report.max_rel_error = std::max(report.max_rel_error, rel);
            ++report.checked;
            if (rel > tolerance) {
                report.failures.push_back(name + "[" + std::to_string(i) + "]: analytic=" +
                                          std::to_string(analytic) + " numeric=" + std::to_string(numeric) +
                                          " rel=" + std::to_string(rel));
            }
        }
    }
    return report;
}

}  // namespace relex
