#pragma once

// Stochastic beam search with temperature, top-k capping, and nucleus
// filtering. Sampling happens at the configured temperature; beam ranking
// uses temperature-1 log-probabilities so scores stay comparable to model
// likelihood. One document is generated per beam, ending at the
// end-of-document token or the token budget.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "relex/common.hpp"
#include "relex/model.hpp"

namespace relex {

struct GenerationConfig {
    int num_beams = 5;
    int top_k = 50;
    double top_p = 0.9;
    double temperature = 3.0;
    int max_tokens = 40;
    int length_filter = 30;  // 0 disables the filter
    std::uint64_t seed = 0;

    void validate() const {
        if (num_beams < 1) throw Error("generation config: num_beams must be at least 1");
        if (top_k < 1) throw Error("generation config: top_k must be at least 1");
        if (!(top_p > 0 && top_p <= 1)) throw Error("generation config: top_p must be in (0,1]");
        if (!(temperature > 0)) throw Error("generation config: temperature must be positive");
        if (max_tokens < 1) throw Error("generation config: max_tokens must be at least 1");
        if (length_filter < 0) throw Error("generation config: length_filter must be non-negative");
    }
};

struct GeneratedSequence {
    std::vector<int> tokens;  // generated only (prompt excluded); includes the terminal EOD if ended_by_eod
    double score = 0;         // sum of temperature-1 log-probabilities of `tokens`
    bool ended_by_eod = false;

    // content length, what the length filter judges
    int content_tokens() const { return static_cast<int>(tokens.size()) - (ended_by_eod ? 1 : 0); }
};

struct GenerationResult {
    std::vector<GeneratedSequence> kept;      // score-descending
    std::vector<GeneratedSequence> filtered;  // dropped by the length filter, score-descending
};

inline std::vector<double> softmax_temperature(const std::vector<double>& logits, double temperature) {
    std::vector<double> p(logits.size());
    double mx = logits[0];
    for (double x : logits) mx = std::max(mx, x);
    double z = 0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        p[i] = std::exp((logits[i] - mx) / temperature);
        z += p[i];
    }
    for (auto& x : p) x /= z;
    return p;
}

inline double log_softmax_at(const std::vector<double>& logits, int id) {
    double mx = logits[0];
    for (double x : logits) mx = std::max(mx, x);
    double z = 0;
    for (double x : logits) z += std::exp(x - mx);
    return logits[id] - mx - std::log(z);
}

// The step's candidate set: tokens sorted by descending probability (ties to
// the lower id), truncated to the nucleus (smallest prefix with cumulative
// probability >= top_p) and then capped at top_k — whichever is tighter.
inline std::vector<int> filtered_candidates(const std::vector<double>& probs, int top_k, double top_p) {
    std::vector<int> order(probs.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](int a, int b) {
        if (probs[a] != probs[b]) return probs[a] > probs[b];
        return a < b;
    });
    std::size_t nucleus = order.size();
    double cum = 0;
    for (std::size_t i = 0; i < order.size(); ++i) {
        cum += probs[order[i]];
        if (cum >= top_p) {
            nucleus = i + 1;
            break;
        }
    }
    order.resize(std::min(nucleus, static_cast<std::size_t>(top_k)));
    return order;
}

// Logits for the next token after `context` (internally truncated to the
// model's context length).
template <class Real>
std::vector<double> next_token_logits(GPTParams<Real>& model, std::span<const int> context) {
    if (context.empty()) throw Error("next_token_logits: empty context");
    const int ctx_len = model.config.context_len;
    if (static_cast<int>(context.size()) > ctx_len) context = context.subspan(context.size() - ctx_len);
    Tape<Real> tape(false);
    Tensor<Real>* logits = gpt_forward(tape, model, context, 1, static_cast<int>(context.size()));
    const Real* last = logits->row(logits->rows - 1);
    std::vector<double> out(logits->cols);
    for (int j = 0; j < logits->cols; ++j) out[j] = static_cast<double>(last[j]);
    return out;
}

namespace detail {

// Draw `draws` distinct entries from (token, prob) without replacement,
// walking the list in its given order so the stream is reproducible.
inline std::vector<int> sample_without_replacement(std::vector<std::pair<int, double>> pool, int draws,
                                                   Rng& rng) {
    std::vector<int> out;
    double total = 0;
    for (const auto& [t, p] : pool) total += p;
    for (int d = 0; d < draws; ++d) {
        const double r = rng.uniform() * total;
        double cum = 0;
        std::size_t pick = pool.size() - 1;
        for (std::size_t i = 0; i < pool.size(); ++i) {
            cum += pool[i].second;
            if (r < cum) {
                pick = i;
                break;
            }
        }
        out.push_back(pool[pick].first);
        total -= pool[pick].second;
        pool.erase(pool.begin() + static_cast<long>(pick));
    }
    return out;
}

}  // namespace detail

// An empty prompt generates unconditioned: the context is seeded with the
// end-of-document token.
template <class Real>
GenerationResult generate(GPTParams<Real>& model, const GenerationConfig& config, std::span<const int> prompt,
                          int eod_id) {
    config.validate();
    if (eod_id < 0 || eod_id >= model.config.vocab_size)
        throw Error("generate: end-of-document id out of vocabulary range");
    for (int id : prompt)
        if (id < 0 || id >= model.config.vocab_size)
            throw Error("generate: prompt token id " + std::to_string(id) + " out of vocabulary range");
    if (static_cast<int>(prompt.size()) >= model.config.context_len)
        throw Error("generate: prompt must be shorter than the context length");

    std::vector<int> base(prompt.begin(), prompt.end());
    if (base.empty()) base.push_back(eod_id);

    struct Beam {
        std::vector<int> gen;
        double score = 0;
        bool finished = false;
    };
    std::vector<Beam> beams(1);
    Rng rng(config.seed);

    for (int step = 0; step < config.max_tokens; ++step) {
        bool any_live = false;
        for (const Beam& b : beams) any_live |= !b.finished;
        if (!any_live) break;

        std::vector<Beam> pool;
        for (const Beam& b : beams)
            if (b.finished) pool.push_back(b);
        for (const Beam& b : beams) {
            if (b.finished) continue;
            std::vector<int> ctx = base;
            ctx.insert(ctx.end(), b.gen.begin(), b.gen.end());
            const std::vector<double> logits = next_token_logits(model, ctx);
            const std::vector<double> probs = softmax_temperature(logits, config.temperature);
            const std::vector<int> cand = filtered_candidates(probs, config.top_k, config.top_p);
            std::vector<std::pair<int, double>> dist;
            double mass = 0;
            for (int id : cand) mass += probs[id];
            for (int id : cand) dist.emplace_back(id, probs[id] / mass);
            const int draws = std::min(config.num_beams, static_cast<int>(dist.size()));
            for (int id : detail::sample_without_replacement(std::move(dist), draws, rng)) {
                Beam nb = b;
                nb.gen.push_back(id);
                nb.score += log_softmax_at(logits, id);
                if (id == eod_id || static_cast<int>(nb.gen.size()) >= config.max_tokens) nb.finished = true;
                pool.push_back(std::move(nb));
            }
        }
        std::stable_sort(pool.begin(), pool.end(), [](const Beam& a, const Beam& b) { return a.score > b.score; });
        if (static_cast<int>(pool.size()) > config.num_beams) pool.resize(config.num_beams);
        beams = std::move(pool);
    }

    GenerationResult result;
    for (Beam& b : beams) {
        GeneratedSequence s;
        s.ended_by_eod = !b.gen.empty() && b.gen.back() == eod_id;
        s.tokens = std::move(b.gen);
        s.score = b.score;
        if (config.length_filter > 0 && s.content_tokens() > config.length_filter)
            result.filtered.push_back(std::move(s));
        else
            result.kept.push_back(std::move(s));
    }
    auto by_score = [](const GeneratedSequence& a, const GeneratedSequence& b) { return a.score > b.score; };
    std::stable_sort(result.kept.begin(), result.kept.end(), by_score);
    std::stable_sort(result.filtered.begin(), result.filtered.end(), by_score);
    return result;
}

}  // namespace relex
