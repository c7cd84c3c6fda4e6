#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <cmath>
#include <set>

#include "relex/generate.hpp"
#include "testutil.hpp"

using namespace relex;

namespace {

ModelConfig micro_config(int vocab = 20) {
    ModelConfig mc;
    mc.n_layers = 1;
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.context_len = 16;
    mc.vocab_size = vocab;
    mc.seed = 31;
    return mc;
}

// zero-layer model with planted d=2 embeddings: every non-eod token embeds as
// (1,0); the eod row is `eod_row`. Positions are zeroed so the next-token
// distribution depends only on the previous token.
GPTParams<double> planted_model(double eod_x, double eod_y, int vocab = 6) {
    ModelConfig mc;
    mc.n_layers = 0;
    mc.d_model = 2;
    mc.n_heads = 1;
    mc.context_len = 32;
    mc.vocab_size = vocab;
    mc.seed = 1;
    GPTParams<double> p = init_params<double>(mc);
    std::fill(p.pos.v.begin(), p.pos.v.end(), 0.0);
    for (int t = 0; t < vocab; ++t) {
        p.tok.at(t, 0) = 1.0;
        p.tok.at(t, 1) = 0.0;
    }
    p.tok.at(vocab - 1, 0) = eod_x;  // the last id acts as eod
    p.tok.at(vocab - 1, 1) = eod_y;
    return p;
}

template <class Real>
void replay_sequence(GPTParams<Real>& model, const GenerationConfig& cfg,
                     const std::vector<int>& prompt, const GeneratedSequence& s, int eod_id) {
    std::vector<int> ctx = prompt;
    if (ctx.empty()) ctx.push_back(eod_id);
    double score = 0;
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
        const std::vector<double> logits = next_token_logits(model, ctx);
        const std::vector<double> probs = softmax_temperature(logits, cfg.temperature);
        const std::vector<int> cand = filtered_candidates(probs, cfg.top_k, cfg.top_p);
        const int tok = s.tokens[i];
        REQUIRE(std::find(cand.begin(), cand.end(), tok) != cand.end());
        score += log_softmax_at(logits, tok);
        ctx.push_back(tok);
    }
    REQUIRE_THAT(s.score, Catch::Matchers::WithinAbs(score, 1e-10));
}

}  // namespace

TEST_CASE("generation config validation") {
    GenerationConfig gc;
    CHECK_NOTHROW(gc.validate());
    gc.num_beams = 0;
    CHECK_THROWS_AS(gc.validate(), Error);
    gc = GenerationConfig{};
    gc.top_k = 0;
    CHECK_THROWS_AS(gc.validate(), Error);
    gc = GenerationConfig{};
    gc.top_p = 0.0;
    CHECK_THROWS_AS(gc.validate(), Error);
    gc = GenerationConfig{};
    gc.top_p = 1.5;
    CHECK_THROWS_AS(gc.validate(), Error);
    gc = GenerationConfig{};
    gc.temperature = 0.0;
    CHECK_THROWS_AS(gc.validate(), Error);
    gc = GenerationConfig{};
    gc.max_tokens = 0;
    CHECK_THROWS_AS(gc.validate(), Error);
    gc = GenerationConfig{};
    gc.length_filter = -1;
    CHECK_THROWS_AS(gc.validate(), Error);
}

TEST_CASE("temperature softmax matches hand values and flattens") {
    const std::vector<double> logits = {0.0, std::log(2.0)};
    const std::vector<double> p1 = softmax_temperature(logits, 1.0);
    CHECK_THAT(p1[0], Catch::Matchers::WithinAbs(1.0 / 3.0, 1e-12));
    CHECK_THAT(p1[1], Catch::Matchers::WithinAbs(2.0 / 3.0, 1e-12));

    const std::vector<double> hot = softmax_temperature(logits, 100.0);
    CHECK(hot[1] > hot[0]);           // order preserved
    CHECK(hot[1] - hot[0] < 0.01);    // nearly uniform
    const std::vector<double> cold = softmax_temperature(logits, 0.05);
    CHECK(cold[1] > 0.999);           // sharpened toward the argmax

    double sum = 0;
    for (double x : softmax_temperature({5.0, -3.0, 0.7, 2.2}, 3.0)) sum += x;
    CHECK_THAT(sum, Catch::Matchers::WithinAbs(1.0, 1e-12));

    // log_softmax_at agrees with the temperature-1 softmax
    const std::vector<double> big = {1.0, -2.0, 0.5, 3.0};
    const std::vector<double> ref = softmax_temperature(big, 1.0);
    for (int i = 0; i < 4; ++i)
        CHECK_THAT(log_softmax_at(big, i), Catch::Matchers::WithinAbs(std::log(ref[i]), 1e-12));
}

TEST_CASE("candidate filtering: nucleus then top-k, ties to lower id") {
    const std::vector<double> probs = {0.5, 0.3, 0.15, 0.05};
    CHECK(filtered_candidates(probs, 10, 0.8) == std::vector<int>{0, 1});
    CHECK(filtered_candidates(probs, 10, 0.81) == std::vector<int>{0, 1, 2});
    CHECK(filtered_candidates(probs, 3, 1.0) == std::vector<int>{0, 1, 2});
    CHECK(filtered_candidates(probs, 1, 1.0) == std::vector<int>{0});

    // input order does not matter: sorted by probability
    const std::vector<double> shuffled = {0.05, 0.5, 0.15, 0.3};
    CHECK(filtered_candidates(shuffled, 10, 0.8) == std::vector<int>{1, 3});

    // equal probabilities resolve to ascending ids
    const std::vector<double> ties = {0.2, 0.4, 0.2, 0.2};
    CHECK(filtered_candidates(ties, 4, 1.0) == std::vector<int>{1, 0, 2, 3});
}

TEST_CASE("next-token logits truncate long contexts to the model window") {
    GPTParams<double> model = init_params<double>(micro_config());
    std::vector<int> ctx(30);
    Rng rng(3);
    for (auto& t : ctx) t = static_cast<int>(rng.uniform_int(20));
    const std::vector<double> full = next_token_logits(model, ctx);
    const std::vector<int> tail(ctx.end() - model.config.context_len, ctx.end());
    const std::vector<double> tailed = next_token_logits(model, tail);
    REQUIRE(full.size() == tailed.size());
    for (std::size_t i = 0; i < full.size(); ++i) REQUIRE(full[i] == tailed[i]);

    CHECK_THROWS_AS(next_token_logits(model, std::vector<int>{}), Error);
}

TEST_CASE("single-beam top-1 generation is greedy argmax decoding") {
    GPTParams<double> model = init_params<double>(micro_config());
    GenerationConfig gc;
    gc.num_beams = 1;
    gc.top_k = 1;
    gc.top_p = 1.0;
    gc.temperature = 2.0;
    gc.max_tokens = 6;
    gc.length_filter = 0;
    gc.seed = 9;
    const std::vector<int> prompt = {1, 2};
    const GenerationResult res = generate(model, gc, prompt, 19);
    REQUIRE(res.kept.size() == 1);
    REQUIRE(res.filtered.empty());
    const GeneratedSequence& s = res.kept[0];

    std::vector<int> ctx = prompt;
    for (int tok : s.tokens) {
        const std::vector<double> logits = next_token_logits(model, ctx);
        int arg = 0;
        for (int j = 1; j < static_cast<int>(logits.size()); ++j)
            if (logits[j] > logits[arg]) arg = j;  // first max, matching the tie rule
        REQUIRE(tok == arg);
        ctx.push_back(tok);
    }
}

TEST_CASE("generation is deterministic in its seed") {
    GPTParams<double> model = init_params<double>(micro_config());
    GenerationConfig gc;
    gc.num_beams = 3;
    gc.top_k = 10;
    gc.top_p = 1.0;
    gc.temperature = 5.0;
    gc.max_tokens = 8;
    gc.length_filter = 0;
    gc.seed = 4;
    const std::vector<int> prompt = {5};

    const GenerationResult a = generate(model, gc, prompt, 19);
    const GenerationResult b = generate(model, gc, prompt, 19);
    REQUIRE(a.kept.size() == b.kept.size());
    for (std::size_t i = 0; i < a.kept.size(); ++i) {
        CHECK(a.kept[i].tokens == b.kept[i].tokens);
        CHECK(a.kept[i].score == b.kept[i].score);
    }

    GenerationConfig other = gc;
    other.seed = 5;
    const GenerationResult c = generate(model, other, prompt, 19);
    bool differs = a.kept.size() != c.kept.size();
    for (std::size_t i = 0; !differs && i < a.kept.size(); ++i)
        differs = a.kept[i].tokens != c.kept[i].tokens;
    CHECK(differs);
}

TEST_CASE("every sampled token comes from that step's candidate set") {
    GPTParams<double> model = init_params<double>(micro_config());
    GenerationConfig gc;
    gc.num_beams = 4;
    gc.top_k = 6;
    gc.top_p = 0.85;
    gc.temperature = 3.0;
    gc.max_tokens = 7;
    gc.length_filter = 0;
    gc.seed = 12;
    const std::vector<int> prompt = {3, 1, 4};
    const GenerationResult res = generate(model, gc, prompt, 19);
    REQUIRE(!res.kept.empty());
    for (const GeneratedSequence& s : res.kept) replay_sequence(model, gc, prompt, s, 19);

    // ranking is by score, best first
    for (std::size_t i = 0; i + 1 < res.kept.size(); ++i)
        CHECK(res.kept[i].score >= res.kept[i + 1].score);
}

TEST_CASE("an empty prompt is seeded with the end-of-document token") {
    GPTParams<double> model = init_params<double>(micro_config());
    GenerationConfig gc;
    gc.num_beams = 2;
    gc.top_k = 5;
    gc.top_p = 1.0;
    gc.temperature = 3.0;
    gc.max_tokens = 4;
    gc.length_filter = 0;
    gc.seed = 7;
    const GenerationResult res = generate(model, gc, {}, 19);
    REQUIRE(!res.kept.empty());
    for (const GeneratedSequence& s : res.kept) replay_sequence(model, gc, {}, s, 19);
}

TEST_CASE("a dominant eod embedding ends every beam immediately") {
    // eod logit ~4 vs ~1 for everything else; cold sampling picks it
    GPTParams<double> model = planted_model(2.0, -2.0);
    GenerationConfig gc;
    gc.num_beams = 3;
    gc.top_k = 1;
    gc.top_p = 1.0;
    gc.temperature = 0.5;
    gc.max_tokens = 10;
    gc.length_filter = 0;
    gc.seed = 2;
    const GenerationResult res = generate(model, gc, std::vector<int>{0, 1}, 5);
    REQUIRE(!res.kept.empty());
    for (const GeneratedSequence& s : res.kept) {
        CHECK(s.ended_by_eod);
        REQUIRE(s.tokens.size() == 1);
        CHECK(s.tokens.back() == 5);   // terminal eod is part of the token list
        CHECK(s.content_tokens() == 0);  // but never counted as content
    }
}

TEST_CASE("beams that never see eod stop at max_tokens") {
    // eod points away from every layernormed input: never the argmax
    GPTParams<double> model = planted_model(-2.0, 2.0);
    GenerationConfig gc;
    gc.num_beams = 2;
    gc.top_k = 1;
    gc.top_p = 0.9;
    gc.temperature = 1.0;
    gc.max_tokens = 6;
    gc.length_filter = 0;
    gc.seed = 3;
    const GenerationResult res = generate(model, gc, std::vector<int>{0}, 5);
    REQUIRE(!res.kept.empty());
    for (const GeneratedSequence& s : res.kept) {
        CHECK_FALSE(s.ended_by_eod);
        CHECK(s.tokens.size() == 6);
        CHECK(s.content_tokens() == 6);
    }
}

TEST_CASE("the length filter partitions by content length") {
    GPTParams<double> model = planted_model(-2.0, 2.0);
    GenerationConfig gc;
    gc.num_beams = 2;
    gc.top_k = 3;
    gc.top_p = 1.0;
    gc.temperature = 2.0;
    gc.max_tokens = 6;
    gc.seed = 8;

    gc.length_filter = 5;  // content 6 > 5: everything lands in filtered
    const GenerationResult strict = generate(model, gc, std::vector<int>{0}, 5);
    CHECK(strict.kept.empty());
    CHECK_FALSE(strict.filtered.empty());
    for (std::size_t i = 0; i + 1 < strict.filtered.size(); ++i)
        CHECK(strict.filtered[i].score >= strict.filtered[i + 1].score);

    gc.length_filter = 6;  // content 6 is allowed: nothing filtered
    const GenerationResult loose = generate(model, gc, std::vector<int>{0}, 5);
    CHECK(loose.filtered.empty());
    CHECK_FALSE(loose.kept.empty());

    gc.length_filter = 0;  // disabled
    const GenerationResult off = generate(model, gc, std::vector<int>{0}, 5);
    CHECK(off.filtered.empty());
}

TEST_CASE("generate validates prompt and eod ids") {
    GPTParams<double> model = init_params<double>(micro_config());
    GenerationConfig gc;
    CHECK_THROWS_AS(generate(model, gc, std::vector<int>{0}, 20), Error);
    CHECK_THROWS_AS(generate(model, gc, std::vector<int>{-1}, 19), Error);
    CHECK_THROWS_AS(generate(model, gc, std::vector<int>{20}, 19), Error);
    const std::vector<int> long_prompt(model.config.context_len, 1);
    CHECK_THROWS_AS(generate(model, gc, long_prompt, 19), Error);
}

TEST_CASE("sampling without replacement draws distinct pool members") {
    Rng rng(17);
    std::vector<std::pair<int, double>> pool = {{3, 0.1}, {8, 0.5}, {2, 0.2}, {9, 0.2}};
    const std::vector<int> got = detail::sample_without_replacement(pool, 4, rng);
    REQUIRE(got.size() == 4);
    std::set<int> uniq(got.begin(), got.end());
    CHECK(uniq == std::set<int>{2, 3, 8, 9});

    Rng rng2(5);
    const std::vector<int> one = detail::sample_without_replacement({{7, 1.0}}, 1, rng2);
    CHECK(one == std::vector<int>{7});
}
