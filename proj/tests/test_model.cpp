#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <fstream>
#include <set>

#include "relex/model.hpp"
#include "testutil.hpp"

using namespace relex;

namespace {

ModelConfig tiny_config() {
    ModelConfig mc;
    mc.n_layers = 2;
    mc.d_model = 16;
    mc.n_heads = 2;
    mc.context_len = 12;
    mc.vocab_size = 20;
    mc.seed = 5;
    return mc;
}

template <class Real>
Mat<Real> forward_logits(GPTParams<Real>& p, const std::vector<int>& ids) {
    Tape<Real> tape(false);
    return gpt_forward(tape, p, ids, 1, static_cast<int>(ids.size()))->to_mat();
}

}  // namespace

TEST_CASE("config validation") {
    ModelConfig mc = tiny_config();
    CHECK_NOTHROW(mc.validate());
    mc.n_heads = 3;  // does not divide 16
    CHECK_THROWS_AS(mc.validate(), Error);
    mc = tiny_config();
    mc.context_len = 1;
    CHECK_THROWS_AS(mc.validate(), Error);
    mc = tiny_config();
    mc.n_layers = -1;
    CHECK_THROWS_AS(mc.validate(), Error);
    mc = tiny_config();
    mc.vocab_size = 0;
    CHECK_THROWS_AS(mc.validate(), Error);
}

TEST_CASE("config text round trips") {
    ModelConfig mc = tiny_config();
    mc.d_ff = 48;
    const ModelConfig back = ModelConfig::from_text(mc.to_text());
    CHECK(back.n_layers == mc.n_layers);
    CHECK(back.d_model == mc.d_model);
    CHECK(back.n_heads == mc.n_heads);
    CHECK(back.d_ff == mc.d_ff);
    CHECK(back.context_len == mc.context_len);
    CHECK(back.vocab_size == mc.vocab_size);
    CHECK(back.seed == mc.seed);
}

TEST_CASE("init is deterministic and follows the stated distribution") {
    const ModelConfig mc = tiny_config();
    const GPTParams<double> a = init_params<double>(mc);
    const GPTParams<double> b = init_params<double>(mc);
    for (std::size_t i = 0; i < a.tok.v.size(); ++i) REQUIRE(a.tok.v[i] == b.tok.v[i]);
    REQUIRE(a.layers.size() == 2);
    for (double v : a.layers[0].ln1_gain.v) CHECK(v == 1.0);
    for (double v : a.layers[0].ln1_bias.v) CHECK(v == 0.0);
    for (double v : a.layers[1].bq.v) CHECK(v == 0.0);
    for (double v : a.lnf_gain.v) CHECK(v == 1.0);

    // weights ~ normal(0, 0.02): sample mean within 3σ/√N
    ModelConfig big = mc;
    big.vocab_size = 512;
    big.d_model = 64;
    big.n_heads = 4;
    const GPTParams<double> w = init_params<double>(big);
    double sum = 0;
    for (double v : w.tok.v) sum += v;
    const double n = static_cast<double>(w.tok.v.size());
    CHECK(std::abs(sum / n) < 3.0 * 0.02 / std::sqrt(n));
}

TEST_CASE("named parameter listing is complete and grouped") {
    GPTParams<double> p = init_params<double>(tiny_config());
    auto params = p.named_params();
    CHECK(params.size() == 2 + 16 * 2 + 2);
    CHECK(params[0].name == "embed.tok");
    CHECK(params[0].group == ParamGroup::lexical_embedding);
    CHECK(params[1].name == "embed.pos");
    CHECK(params[1].group == ParamGroup::positional_embedding);
    CHECK(params.back().name == "final_ln.bias");
    CHECK(params.back().group == ParamGroup::final_layernorm);
    std::size_t total = 0;
    for (const auto& pr : params) total += pr.tensor->v.size();
    CHECK(total == p.num_parameters());

    std::set<std::string> names;
    for (const auto& pr : params) names.insert(pr.name);
    CHECK(names.size() == params.size());  // unique names
}

TEST_CASE("zero-layer forward is layernorm of embeddings times E transposed") {
    ModelConfig mc;
    mc.n_layers = 0;
    mc.d_model = 2;
    mc.n_heads = 1;
    mc.context_len = 4;
    mc.vocab_size = 4;
    mc.seed = 1;
    GPTParams<double> p = init_params<double>(mc);
    // plant exact values
    p.tok.v = {1.0, 3.0, 0.5, -0.5, 2.0, 2.0, -1.0, 0.0};  // 4×2
    p.pos.v = {0.1, -0.1, 0.0, 0.2, 0.3, 0.0, -0.2, 0.1};  // 4×2
    p.lnf_gain.v = {1.0, 1.0};
    p.lnf_bias.v = {0.0, 0.0};

    const std::vector<int> ids = {2, 0, 3};
    const Mat<double> logits = forward_logits(p, ids);
    REQUIRE(logits.rows == 3);
    REQUIRE(logits.cols == 4);

    // independent oracle: plain arithmetic, no tape machinery
    for (int t = 0; t < 3; ++t) {
        const double x0 = p.tok.v[ids[t] * 2] + p.pos.v[t * 2];
        const double x1 = p.tok.v[ids[t] * 2 + 1] + p.pos.v[t * 2 + 1];
        const double mean = (x0 + x1) / 2.0;
        const double var = ((x0 - mean) * (x0 - mean) + (x1 - mean) * (x1 - mean)) / 2.0;
        const double h0 = (x0 - mean) / std::sqrt(var + 1e-5);
        const double h1 = (x1 - mean) / std::sqrt(var + 1e-5);
        for (int v = 0; v < 4; ++v) {
            const double expect = h0 * p.tok.v[v * 2] + h1 * p.tok.v[v * 2 + 1];
            REQUIRE_THAT(logits.at(t, v), Catch::Matchers::WithinAbs(expect, 1e-12));
        }
    }
}

TEST_CASE("appending a token leaves earlier logits bitwise unchanged") {
    GPTParams<double> p = init_params<double>(tiny_config());
    const std::vector<int> prefix = {3, 1, 4, 1, 5};
    std::vector<int> extended = prefix;
    extended.push_back(9);
    const Mat<double> a = forward_logits(p, prefix);
    const Mat<double> b = forward_logits(p, extended);
    for (int t = 0; t < a.rows; ++t)
        for (int v = 0; v < a.cols; ++v) REQUIRE(a.at(t, v) == b.at(t, v));
}

TEST_CASE("tied weights: perturbing the embedding moves the logits twice over") {
    GPTParams<double> p = init_params<double>(tiny_config());
    const std::vector<int> ids = {7, 2};
    const Mat<double> before = forward_logits(p, ids);
    // perturb a row not used as input: only the output side can change
    for (int j = 0; j < p.config.d_model; ++j) p.tok.v[11 * p.config.d_model + j] += 0.25;
    const Mat<double> after = forward_logits(p, ids);
    bool moved = false;
    for (int t = 0; t < before.rows; ++t) {
        moved = moved || after.at(t, 11) != before.at(t, 11);
        for (int v = 0; v < before.cols; ++v)
            if (v != 11) REQUIRE(after.at(t, v) == before.at(t, v));
    }
    CHECK(moved);

    // perturbing an input row changes the whole row of logits
    for (int j = 0; j < p.config.d_model; ++j) p.tok.v[7 * p.config.d_model + j] += 0.25;
    const Mat<double> third = forward_logits(p, ids);
    int changed = 0;
    for (int v = 0; v < third.cols; ++v) changed += third.at(0, v) != after.at(0, v);
    CHECK(changed > p.config.vocab_size / 2);
}

TEST_CASE("forward validates inputs") {
    GPTParams<double> p = init_params<double>(tiny_config());
    Tape<double> tape(false);
    const std::vector<int> too_long(p.config.context_len + 1, 1);
    CHECK_THROWS_AS(gpt_forward(tape, p, too_long, 1, static_cast<int>(too_long.size())), Error);
    const std::vector<int> bad = {p.config.vocab_size};
    CHECK_THROWS_AS(gpt_forward(tape, p, bad, 1, 1), Error);
    CHECK_THROWS_AS(gpt_forward(tape, p, std::vector<int>{}, 1, 0), Error);
}

TEST_CASE("full-model gradients pass the finite-difference oracle") {
    ModelConfig mc;
    mc.n_layers = 1;
    mc.d_model = 8;
    mc.n_heads = 2;
    mc.context_len = 6;
    mc.vocab_size = 10;
    mc.seed = 3;
    GPTParams<double> p = init_params<double>(mc);
    const std::vector<int> ids = {1, 2, 3, 4};
    const std::vector<int> targets = {2, 3, 4, 5};
    const std::vector<unsigned char> mask = {1, 1, 1, 1};

    std::vector<std::pair<std::string, Tensor<double>*>> leaves;
    for (auto& pr : p.named_params()) {
        pr.tensor->requires_grad = true;
        pr.tensor->ensure_grad();
        pr.tensor->zero_grad();
        leaves.emplace_back(pr.name, pr.tensor);
    }
    Tape<double> tape;
    auto* logits = gpt_forward(tape, p, ids, 1, 4);
    tape.backward(tape.cross_entropy_sum(logits, targets, mask));

    auto loss_fn = [&]() {
        Tape<double> fresh(false);
        auto* lg = gpt_forward(fresh, p, ids, 1, 4);
        return static_cast<double>(fresh.cross_entropy_sum(lg, targets, mask)->v[0]);
    };
    const FiniteDiffReport rep = finite_difference_check(loss_fn, leaves, 1e-5, 1e-4);
    INFO((rep.failures.empty() ? std::string("clean") : rep.failures.front()));
    CHECK(rep.max_rel_error < 1e-4);
}

TEST_CASE("swap_vocabulary replaces only the lexical embedding") {
    GPTParams<double> p = init_params<double>(tiny_config());
    const GPTParams<double> bigger = swap_vocabulary(p, 33, 99);
    CHECK(bigger.config.vocab_size == 33);
    CHECK(bigger.tok.rows == 33);
    for (std::size_t i = 0; i < p.pos.v.size(); ++i) REQUIRE(bigger.pos.v[i] == p.pos.v[i]);
    for (std::size_t i = 0; i < p.layers[0].wq.v.size(); ++i)
        REQUIRE(bigger.layers[0].wq.v[i] == p.layers[0].wq.v[i]);
    for (std::size_t i = 0; i < p.lnf_gain.v.size(); ++i) REQUIRE(bigger.lnf_gain.v[i] == p.lnf_gain.v[i]);

    const GPTParams<double> again = swap_vocabulary(p, 33, 99);
    for (std::size_t i = 0; i < bigger.tok.v.size(); ++i) REQUIRE(again.tok.v[i] == bigger.tok.v[i]);
    const GPTParams<double> other = swap_vocabulary(p, 33, 100);
    bool same = true;
    for (std::size_t i = 0; i < bigger.tok.v.size(); ++i) same = same && other.tok.v[i] == bigger.tok.v[i];
    CHECK_FALSE(same);

    Mat<double> planted(5, p.config.d_model);
    for (std::size_t i = 0; i < planted.v.size(); ++i) planted.v[i] = 0.001 * static_cast<double>(i);
    const GPTParams<double> explicit_swap = swap_vocabulary(p, planted);
    CHECK(explicit_swap.config.vocab_size == 5);
    for (std::size_t i = 0; i < planted.v.size(); ++i) REQUIRE(explicit_swap.tok.v[i] == planted.v[i]);

    CHECK_THROWS_AS(swap_vocabulary(p, Mat<double>(5, p.config.d_model + 1)), Error);
    CHECK_THROWS_AS(swap_vocabulary(p, 0, 1), Error);
}

TEST_CASE("checkpoints round trip bitwise") {
    const std::string dir = testutil::fresh_dir("relex_model_ckpt");

    // float models round trip exactly: the file stores 32-bit values
    GPTParams<float> pf = init_params<float>(tiny_config());
    const std::string pathf = dir + "/f.ckpt";
    save_checkpoint(pf, pathf);
    GPTParams<float> qf = load_checkpoint<float>(pathf);
    auto pfa = pf.named_params();
    auto qfa = qf.named_params();
    REQUIRE(pfa.size() == qfa.size());
    for (std::size_t i = 0; i < pfa.size(); ++i) {
        REQUIRE(pfa[i].name == qfa[i].name);
        REQUIRE(pfa[i].tensor->v == qfa[i].tensor->v);
    }

    // double models land on the f32 grid once and are stable from then on
    GPTParams<double> p = init_params<double>(tiny_config());
    p.config.seed = 77;
    const std::string path = dir + "/m.ckpt";
    save_checkpoint(p, path);
    GPTParams<double> q = load_checkpoint<double>(path);
    CHECK(q.config.to_text() == p.config.to_text());
    auto pa = p.named_params();
    auto qa = q.named_params();
    REQUIRE(pa.size() == qa.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        REQUIRE(pa[i].name == qa[i].name);
        const auto& a = pa[i].tensor->v;
        const auto& b = qa[i].tensor->v;
        REQUIRE(a.size() == b.size());
        std::size_t mismatched = 0;
        for (std::size_t j = 0; j < a.size(); ++j)
            if (b[j] != static_cast<double>(static_cast<float>(a[j]))) ++mismatched;
        REQUIRE(mismatched == 0);
    }
    // saving the loaded model reproduces the file byte for byte
    const std::string path2 = dir + "/m2.ckpt";
    save_checkpoint(q, path2);
    CHECK(file_digest(path) == file_digest(path2));
}

TEST_CASE("checkpoint loader rejects corruption") {
    const std::string dir = testutil::fresh_dir("relex_model_ckpt_bad");
    GPTParams<float> p = init_params<float>(tiny_config());
    const std::string path = dir + "/m.ckpt";
    save_checkpoint(p, path);

    std::string bytes = read_text_file(path);
    std::string corrupted = bytes;
    corrupted[0] = 'X';
    write_text_file(dir + "/magic.ckpt", corrupted);
    CHECK_THROWS_AS(load_checkpoint<float>(dir + "/magic.ckpt"), FormatError);

    corrupted = bytes;
    corrupted[8] = static_cast<char>(99);  // version field follows the 8-byte magic
    write_text_file(dir + "/ver.ckpt", corrupted);
    CHECK_THROWS_AS(load_checkpoint<float>(dir + "/ver.ckpt"), VersionError);

    write_text_file(dir + "/trunc.ckpt", bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint<float>(dir + "/trunc.ckpt"), FormatError);

    write_text_file(dir + "/extra.ckpt", bytes + "junk");
    CHECK_THROWS_AS(load_checkpoint<float>(dir + "/extra.ckpt"), FormatError);

    CHECK_THROWS_AS(load_checkpoint<float>(dir + "/absent.ckpt"), Error);
}

TEST_CASE("checkpoints carry float values exactly across precisions") {
    const std::string dir = testutil::fresh_dir("relex_model_ckpt_f32");
    GPTParams<float> p = init_params<float>(tiny_config());
    save_checkpoint(p, dir + "/f.ckpt");
    GPTParams<double> q = load_checkpoint<double>(dir + "/f.ckpt");
    for (std::size_t i = 0; i < p.tok.v.size(); ++i)
        REQUIRE(q.tok.v[i] == static_cast<double>(p.tok.v[i]));
}

TEST_CASE("freeze spec controls trainability groups") {
    GPTParams<double> p = init_params<double>(tiny_config());
    p.set_trainable(FreezeSpec::lexical_only());
    for (const auto& pr : p.named_params()) {
        const bool expect = pr.group == ParamGroup::lexical_embedding;
        CHECK(pr.tensor->requires_grad == expect);
    }
    FreezeSpec none;
    CHECK_THROWS_AS(none.validate(), Error);
    CHECK(FreezeSpec::all().is_trainable(ParamGroup::transformer_layers));
}
