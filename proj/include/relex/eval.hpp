#pragma once

// Evaluation suite: strided-window perplexity with exactly-once token
// scoring, the Int@k shared-neighbour metric between two embedding spaces,
// and nearest-neighbour alignment tables across vocabularies.

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "relex/matrix.hpp"
#include "relex/model.hpp"
#include "relex/transform.hpp"

namespace relex {

struct PerplexityReport {
    long scored_tokens = 0;
    double mean_nll = 0;  // nats
    double perplexity = 1;
    int window = 0;
    int stride = 0;
};

// One evaluation window: the model reads tokens [ctx_start, end) and scores
// positions [score_from, end) — position t conditioned on [ctx_start, t).
struct PplChunk {
    int ctx_start;
    int score_from;
    int end;
};

// The first window scores everything it covers past position 0, later
// windows only their unseen tail, conditioned on the window − stride tokens
// carried over. Causal scoring needs at least one context token, so when
// stride equals window each later chunk carries one token instead and the
// schedule drifts accordingly; the final window is anchored at the end so
// the remaining positions are still scored exactly once.
inline std::vector<PplChunk> strided_schedule(int n, int window, int stride) {
    if (n < 2) throw Error("strided_schedule: sequence must have at least 2 tokens");
    if (window < 2) throw Error("strided_schedule: window must be at least 2");
    if (stride < 1 || stride > window) throw Error("strided_schedule: need 1 <= stride <= window");
    std::vector<PplChunk> chunks;
    int covered = std::min(n, window);
    chunks.push_back({0, 1, covered});
    while (covered < n) {
        int end = covered + stride;
        int ctx = end - window;
        if (end > n) {
            end = n;
            ctx = std::max(0, n - window);
        }
        if (ctx >= covered) {
            ctx = covered - 1;
            end = std::min(n, ctx + window);
        }
        chunks.push_back({ctx, covered, end});
        covered = end;
    }
    return chunks;
}

// logits_fn(context) must return one row of logits per context position.
template <class LogitsFn>
PerplexityReport strided_perplexity_with(LogitsFn&& logits_fn, std::span<const int> tokens, int window,
                                         int stride) {
    const int n = static_cast<int>(tokens.size());
    const auto chunks = strided_schedule(n, window, stride);
    double total_nll = 0;
    long scored = 0;
    for (const PplChunk& c : chunks) {
        std::span<const int> ctx = tokens.subspan(c.ctx_start, c.end - c.ctx_start);
        const Mat<double> logits = logits_fn(ctx);
        if (logits.rows != static_cast<int>(ctx.size()))
            throw ShapeError("strided_perplexity: logits rows disagree with context length");
        for (int t = c.score_from; t < c.end; ++t) {
            const double* row = logits.row(t - 1 - c.ctx_start);
            const int target = tokens[t];
            if (target < 0 || target >= logits.cols) throw Error("strided_perplexity: token id out of range");
            double mx = row[0];
            for (int j = 1; j < logits.cols; ++j) mx = std::max(mx, row[j]);
            double z = 0;
            for (int j = 0; j < logits.cols; ++j) z += std::exp(row[j] - mx);
            total_nll += mx + std::log(z) - row[target];
            ++scored;
        }
    }
    PerplexityReport r;
    r.scored_tokens = scored;
    r.mean_nll = total_nll / static_cast<double>(scored);
    r.perplexity = std::exp(r.mean_nll);
    r.window = window;
    r.stride = stride;
    return r;
}

template <class Real>
PerplexityReport strided_perplexity(GPTParams<Real>& model, std::span<const int> tokens, int window,
                                    int stride) {
    if (window > model.config.context_len)
        throw Error("strided_perplexity: window exceeds model context length");
    return strided_perplexity_with(
        [&](std::span<const int> ctx) {
            Tape<Real> tape(false);
            Tensor<Real>* logits = gpt_forward(tape, model, ctx, 1, static_cast<int>(ctx.size()));
            Mat<double> out(logits->rows, logits->cols);
            for (std::size_t i = 0; i < logits->v.size(); ++i) out.v[i] = static_cast<double>(logits->v[i]);
            return out;
        },
        tokens, window, stride);
}

// Mean strided perplexity over a set of documents, pooled over every scored
// token (documents shorter than 2 tokens are skipped).
template <class Real>
PerplexityReport corpus_perplexity(GPTParams<Real>& model, const std::vector<std::vector<int>>& docs,
                                   int window, int stride) {
    double total_nll = 0;
    long scored = 0;
    for (const auto& doc : docs) {
        if (doc.size() < 2) continue;
        PerplexityReport r = strided_perplexity(model, doc, window, stride);
        total_nll += r.mean_nll * static_cast<double>(r.scored_tokens);
        scored += r.scored_tokens;
    }
    if (scored == 0) throw Error("corpus_perplexity: no scorable tokens");
    PerplexityReport r;
    r.scored_tokens = scored;
    r.mean_nll = total_nll / static_cast<double>(scored);
    r.perplexity = std::exp(r.mean_nll);
    r.window = window;
    r.stride = stride;
    return r;
}

// ---------------------------------------------------------------------------
// Int@k: how much of a token's k-nearest anchor neighbourhood survives the
// move from space a to space b.

inline double intersection_at_k(const Mat<double>& emb_a, const Mat<double>& anchors_a,
                                const Mat<double>& emb_b, const Mat<double>& anchors_b, int k) {
    if (emb_a.rows != emb_b.rows) throw ShapeError("intersection_at_k: embedding row counts disagree");
    if (anchors_a.rows != anchors_b.rows) throw ShapeError("intersection_at_k: anchor row counts disagree");
    if (emb_a.cols != anchors_a.cols || emb_b.cols != anchors_b.cols)
        throw ShapeError("intersection_at_k: embedding/anchor widths disagree");
    if (k < 1 || k > anchors_a.rows) throw Error("intersection_at_k: k must be in [1, anchor count]");
    if (emb_a.rows < 1) throw Error("intersection_at_k: no embedding rows");
    double total = 0;
    for (int i = 0; i < emb_a.rows; ++i) {
        const auto na = detail::nearest_anchors(emb_a.row(i), anchors_a, k);
        const auto nb = detail::nearest_anchors(emb_b.row(i), anchors_b, k);
        std::set<int> sa;
        for (const auto& [d, idx] : na) sa.insert(idx);
        int shared = 0;
        for (const auto& [d, idx] : nb) shared += sa.count(idx);
        total += static_cast<double>(shared) / static_cast<double>(k);
    }
    return total / static_cast<double>(emb_a.rows);
}

// ---------------------------------------------------------------------------
// Alignment tables: for each anchor row, the nearest rows of the target
// embedding by cosine similarity.

struct AlignmentRow {
    int anchor_id;
    std::vector<std::pair<int, double>> neighbors;  // (target id, cosine similarity), best first
};

struct AlignmentTable {
    std::vector<AlignmentRow> rows;
};

// anchor_subset selects which anchor rows to tabulate (all when null).
inline AlignmentTable nearest_neighbor_alignment(const Mat<double>& emb_target, const Mat<double>& emb_anchor,
                                                 int top_n, const std::vector<int>* anchor_subset = nullptr) {
    if (emb_target.cols != emb_anchor.cols) throw ShapeError("alignment: embedding widths disagree");
    if (top_n < 0) throw Error("alignment: top_n must be non-negative");
    AlignmentTable table;
    if (top_n == 0) return table;
    const int k = std::min(top_n, emb_target.rows);
    std::vector<int> all;
    if (!anchor_subset) {
        all.resize(emb_anchor.rows);
        std::iota(all.begin(), all.end(), 0);
    }
    const std::vector<int>& ids = anchor_subset ? *anchor_subset : all;
    for (int a : ids) {
        if (a < 0 || a >= emb_anchor.rows) throw Error("alignment: anchor id out of range");
        AlignmentRow row;
        row.anchor_id = a;
        for (const auto& [dist, idx] : detail::nearest_anchors(emb_anchor.row(a), emb_target, k))
            row.neighbors.emplace_back(idx, 1.0 - dist);
        table.rows.push_back(std::move(row));
    }
    return table;
}

namespace detail {

// Tokens are raw byte strings; keep the table one-line-per-record even when
// a token contains tabs or newlines.
inline std::string escape_token(const std::string& s) {
    std::string out;
    for (unsigned char c : s) {
        if (c == '\\') out += "\\\\";
        else if (c == '\t') out += "\\t";
        else if (c == '\n') out += "\\n";
        else if (c == '\r') out += "\\r";
        else if (c < 0x20 || c == 0x7f) {
            char buf[8];
            std::snprintf(buf, sizeof(buf), "\\x%02x", c);
            out += buf;
        } else {
            out += static_cast<char>(c);
        }
    }
    return out;
}

}  // namespace detail

// One line per anchor: anchor token, then (neighbour token, similarity) pairs.
inline std::string alignment_to_tsv(const AlignmentTable& table, const std::vector<std::string>& anchor_names,
                                    const std::vector<std::string>& target_names) {
    std::ostringstream os;
    os.precision(6);
    os << std::fixed;
    for (const AlignmentRow& row : table.rows) {
        if (row.anchor_id >= static_cast<int>(anchor_names.size()))
            throw Error("alignment_to_tsv: anchor name table too small");
        os << detail::escape_token(anchor_names[row.anchor_id]);
        for (const auto& [id, sim] : row.neighbors) {
            if (id >= static_cast<int>(target_names.size()))
                throw Error("alignment_to_tsv: target name table too small");
            os << "\t" << detail::escape_token(target_names[id]) << "\t" << sim;
        }
        os << "\n";
    }
    return os.str();
}

}  // namespace relex
