#pragma once

// Decoder-only transformer language model in the GPT-2 mould: learned
// absolute positions, pre-layernorm blocks, tanh-GELU MLPs, and a single
// token-embedding matrix reused (transposed) as the output projection.
// Parameters live in four freezable groups so training can update any
// subset — relearning touches only the lexical embedding.

#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "relex/autodiff.hpp"
#include "relex/common.hpp"
#include "relex/matrix.hpp"

namespace relex {

struct ModelConfig {
    int n_layers = 2;
    int d_model = 64;
    int n_heads = 4;
    int d_ff = 0;  // 0 means 4*d_model
    int context_len = 128;
    int vocab_size = 512;
    std::uint64_t seed = 0;

    int ff() const { return d_ff > 0 ? d_ff : 4 * d_model; }

    void validate() const {
        if (n_layers < 0) throw Error("model config: n_layers must be >= 0");
        if (d_model <= 0 || n_heads <= 0 || context_len < 2 || vocab_size < 1)
            throw Error("model config: dimensions must be positive (context_len >= 2)");
        if (d_model % n_heads != 0) throw Error("model config: n_heads must divide d_model");
        if (d_ff < 0) throw Error("model config: d_ff must be positive or 0 for default");
    }

    std::string to_text() const {
        std::ostringstream os;
        os << "n_layers=" << n_layers << "\n"
           << "d_model=" << d_model << "\n"
           << "n_heads=" << n_heads << "\n"
           << "d_ff=" << d_ff << "\n"
           << "context_len=" << context_len << "\n"
           << "vocab_size=" << vocab_size << "\n"
           << "seed=" << seed << "\n";
        return os.str();
    }

    static ModelConfig from_text(const std::string& text) {
        std::map<std::string, std::string> kv;
        std::istringstream is(text);
        std::string line;
        while (std::getline(is, line)) {
            auto eq = line.find('=');
            if (eq == std::string::npos) continue;
            kv[line.substr(0, eq)] = line.substr(eq + 1);
        }
        auto need = [&](const char* key) {
            auto it = kv.find(key);
            if (it == kv.end()) throw FormatError(std::string("checkpoint config missing field ") + key);
            return it->second;
        };
        ModelConfig c;
        c.n_layers = std::stoi(need("n_layers"));
        c.d_model = std::stoi(need("d_model"));
        c.n_heads = std::stoi(need("n_heads"));
        c.d_ff = std::stoi(need("d_ff"));
        c.context_len = std::stoi(need("context_len"));
        c.vocab_size = std::stoi(need("vocab_size"));
        c.seed = std::stoull(need("seed"));
        c.validate();
        return c;
    }
};

enum class ParamGroup { lexical_embedding, positional_embedding, transformer_layers, final_layernorm };

inline const char* param_group_name(ParamGroup g) {
    switch (g) {
        case ParamGroup::lexical_embedding: return "lexical_embedding";
        case ParamGroup::positional_embedding: return "positional_embedding";
        case ParamGroup::transformer_layers: return "transformer_layers";
        case ParamGroup::final_layernorm: return "final_layernorm";
    }
    return "?";
}

inline ParamGroup param_group_from_name(const std::string& s) {
    if (s == "lexical_embedding") return ParamGroup::lexical_embedding;
    if (s == "positional_embedding") return ParamGroup::positional_embedding;
    if (s == "transformer_layers") return ParamGroup::transformer_layers;
    if (s == "final_layernorm") return ParamGroup::final_layernorm;
    throw Error("unknown parameter group: " + s);
}

// Which groups receive optimizer updates.
struct FreezeSpec {
    std::set<ParamGroup> trainable;

    static FreezeSpec all() {
        return {{ParamGroup::lexical_embedding, ParamGroup::positional_embedding,
                 ParamGroup::transformer_layers, ParamGroup::final_layernorm}};
    }
    static FreezeSpec lexical_only() { return {{ParamGroup::lexical_embedding}}; }

    bool is_trainable(ParamGroup g) const { return trainable.count(g) > 0; }
    void validate() const {
        if (trainable.empty()) throw Error("freeze spec: at least one group must be trainable");
    }
};

template <class Real>
struct ParamRef {
    std::string name;
    ParamGroup group;
    Tensor<Real>* tensor;
};

template <class Real>
struct GPTParams {
    ModelConfig config;

    Tensor<Real> tok;  // vocab_size x d_model, tied with the output projection
    Tensor<Real> pos;  // context_len x d_model

    struct Layer {
        Tensor<Real> ln1_gain, ln1_bias;
        Tensor<Real> wq, wk, wv, wo;
        Tensor<Real> bq, bk, bv, bo;
        Tensor<Real> ln2_gain, ln2_bias;
        Tensor<Real> w1, b1, w2, b2;
    };
    std::vector<Layer> layers;

    Tensor<Real> lnf_gain, lnf_bias;

    // Declaration-order listing; checkpoint I/O sorts by name.
    std::vector<ParamRef<Real>> named_params() {
        std::vector<ParamRef<Real>> out;
        out.push_back({"embed.tok", ParamGroup::lexical_embedding, &tok});
        out.push_back({"embed.pos", ParamGroup::positional_embedding, &pos});
        char name[64];
        for (int i = 0; i < static_cast<int>(layers.size()); ++i) {
            Layer& l = layers[i];
            auto push = [&](const char* suffix, Tensor<Real>* t) {
                std::snprintf(name, sizeof(name), "layers.%02d.%s", i, suffix);
                out.push_back({name, ParamGroup::transformer_layers, t});
            };
            push("ln1.gain", &l.ln1_gain);
            push("ln1.bias", &l.ln1_bias);
            push("attn.wq", &l.wq);
            push("attn.wk", &l.wk);
            push("attn.wv", &l.wv);
            push("attn.wo", &l.wo);
            push("attn.bq", &l.bq);
            push("attn.bk", &l.bk);
            push("attn.bv", &l.bv);
            push("attn.bo", &l.bo);
            push("ln2.gain", &l.ln2_gain);
            push("ln2.bias", &l.ln2_bias);
            push("mlp.w1", &l.w1);
            push("mlp.b1", &l.b1);
            push("mlp.w2", &l.w2);
            push("mlp.b2", &l.b2);
        }
        out.push_back({"final_ln.gain", ParamGroup::final_layernorm, &lnf_gain});
        out.push_back({"final_ln.bias", ParamGroup::final_layernorm, &lnf_bias});
        return out;
    }

    void set_trainable(const FreezeSpec& spec) {
        for (auto& p : named_params()) {
            p.tensor->requires_grad = spec.is_trainable(p.group);
            if (p.tensor->requires_grad)
                p.tensor->ensure_grad();
            else
                p.tensor->g.clear();
        }
    }

    std::size_t num_parameters() {
        std::size_t n = 0;
        for (auto& p : named_params()) n += p.tensor->size();
        return n;
    }
};

namespace detail {

template <class Real>
void fill_normal(Tensor<Real>& t, Rng& rng, double stddev) {
    for (auto& x : t.v) x = static_cast<Real>(rng.normal() * stddev);
}

}  // namespace detail

// Weights ~ normal(0, 0.02), biases zero, layernorm gains one; the draw
// order is the declaration order of named_params, so equal seeds give
// bitwise-equal parameters.
template <class Real>
GPTParams<Real> init_params(const ModelConfig& config) {
    config.validate();
    GPTParams<Real> p;
    p.config = config;
    const int d = config.d_model, ff = config.ff();

    p.tok = Tensor<Real>(config.vocab_size, d, true);
    p.pos = Tensor<Real>(config.context_len, d, true);
    p.layers.resize(config.n_layers);
    for (auto& l : p.layers) {
        l.ln1_gain = Tensor<Real>(1, d, true);
        l.ln1_bias = Tensor<Real>(1, d, true);
        l.wq = Tensor<Real>(d, d, true);
        l.wk = Tensor<Real>(d, d, true);
        l.wv = Tensor<Real>(d, d, true);
        l.wo = Tensor<Real>(d, d, true);
        l.bq = Tensor<Real>(1, d, true);
        l.bk = Tensor<Real>(1, d, true);
        l.bv = Tensor<Real>(1, d, true);
        l.bo = Tensor<Real>(1, d, true);
        l.ln2_gain = Tensor<Real>(1, d, true);
        l.ln2_bias = Tensor<Real>(1, d, true);
        l.w1 = Tensor<Real>(d, ff, true);
        l.b1 = Tensor<Real>(1, ff, true);
        l.w2 = Tensor<Real>(ff, d, true);
        l.b2 = Tensor<Real>(1, d, true);
    }
    p.lnf_gain = Tensor<Real>(1, d, true);
    p.lnf_bias = Tensor<Real>(1, d, true);

    Rng rng(config.seed);
    detail::fill_normal(p.tok, rng, 0.02);
    detail::fill_normal(p.pos, rng, 0.02);
    for (auto& l : p.layers) {
        std::fill(l.ln1_gain.v.begin(), l.ln1_gain.v.end(), Real(1));
        detail::fill_normal(l.wq, rng, 0.02);
        detail::fill_normal(l.wk, rng, 0.02);
        detail::fill_normal(l.wv, rng, 0.02);
        detail::fill_normal(l.wo, rng, 0.02);
        std::fill(l.ln2_gain.v.begin(), l.ln2_gain.v.end(), Real(1));
        detail::fill_normal(l.w1, rng, 0.02);
        detail::fill_normal(l.w2, rng, 0.02);
    }
    std::fill(p.lnf_gain.v.begin(), p.lnf_gain.v.end(), Real(1));
    return p;
}

// Forward over a batch of equal-length sequences flattened row-major into
// ids (batch*len entries). Returns logits (batch*len) x vocab_size.
template <class Real>
Tensor<Real>* gpt_forward(Tape<Real>& tape, GPTParams<Real>& p, std::span<const int> ids, int batch, int len) {
    if (len < 1) throw Error("forward: empty sequence");
    if (len > p.config.context_len) throw Error("forward: sequence length exceeds context length");
    const int heads = p.config.n_heads;

    Tensor<Real>* x = tape.embed(&p.tok, &p.pos, ids, batch, len);
    for (auto& l : p.layers) {
        Tensor<Real>* h = tape.layer_norm(x, &l.ln1_gain, &l.ln1_bias);
        Tensor<Real>* q = tape.add_row(tape.matmul(h, &l.wq), &l.bq);
        Tensor<Real>* k = tape.add_row(tape.matmul(h, &l.wk), &l.bk);
        Tensor<Real>* v = tape.add_row(tape.matmul(h, &l.wv), &l.bv);
        Tensor<Real>* att = tape.attention(q, k, v, heads, batch, len);
        Tensor<Real>* proj = tape.add_row(tape.matmul(att, &l.wo), &l.bo);
        x = tape.add(x, proj);

        Tensor<Real>* h2 = tape.layer_norm(x, &l.ln2_gain, &l.ln2_bias);
        Tensor<Real>* m = tape.add_row(tape.matmul(h2, &l.w1), &l.b1);
        m = tape.gelu(m);
        m = tape.add_row(tape.matmul(m, &l.w2), &l.b2);
        x = tape.add(x, m);
    }
    Tensor<Real>* xf = tape.layer_norm(x, &p.lnf_gain, &p.lnf_bias);
    return tape.matmul_nt(xf, &p.tok);  // tied output projection
}

// Replace the lexical embedding with a fresh normal(0, 0.02) draw for a new
// vocabulary; every other tensor is copied bitwise.
template <class Real>
GPTParams<Real> swap_vocabulary(const GPTParams<Real>& params, int new_vocab_size, std::uint64_t seed) {
    if (new_vocab_size < 1) throw Error("swap_vocabulary: vocabulary size must be positive");
    GPTParams<Real> out = params;
    out.config.vocab_size = new_vocab_size;
    out.config.seed = seed;
    out.tok = Tensor<Real>(new_vocab_size, params.config.d_model, true);
    Rng rng(seed);
    detail::fill_normal(out.tok, rng, 0.02);
    return out;
}

// Variant used after a transform: the supplied matrix is stored verbatim.
template <class Real>
GPTParams<Real> swap_vocabulary(const GPTParams<Real>& params, const Mat<Real>& embedding) {
    if (embedding.cols != params.config.d_model)
        throw Error("swap_vocabulary: supplied embedding width does not match d_model");
    if (embedding.rows < 1) throw Error("swap_vocabulary: supplied embedding is empty");
    GPTParams<Real> out = params;
    out.config.vocab_size = embedding.rows;
    out.tok = Tensor<Real>::from_mat(embedding, true);
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints: versioned binary, header then tensors in sorted name order.
// Values are stored as 32-bit little-endian floats regardless of Real.

inline constexpr char kCheckpointMagic[8] = {'R', 'E', 'L', 'E', 'X', 'C', 'K', 'P'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

template <class Real>
void save_checkpoint(GPTParams<Real>& params, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw Error("cannot open checkpoint for writing: " + path);
    os.write(kCheckpointMagic, 8);
    write_u32(os, kCheckpointVersion);
    const std::string cfg = params.config.to_text();
    write_u32(os, static_cast<std::uint32_t>(cfg.size()));
    os.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));

    auto named = params.named_params();
    std::sort(named.begin(), named.end(), [](const auto& a, const auto& b) { return a.name < b.name; });
    write_u32(os, static_cast<std::uint32_t>(named.size()));
    for (const auto& p : named) {
        write_u32(os, static_cast<std::uint32_t>(p.name.size()));
        os.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
        write_u32(os, static_cast<std::uint32_t>(p.tensor->rows));
        write_u32(os, static_cast<std::uint32_t>(p.tensor->cols));
        for (Real x : p.tensor->v) write_f32(os, static_cast<float>(x));
    }
    if (!os) throw Error("checkpoint write failed: " + path);
}

template <class Real>
GPTParams<Real> load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw Error("cannot open checkpoint: " + path);
    char magic[8];
    is.read(magic, 8);
    if (!is || std::memcmp(magic, kCheckpointMagic, 8) != 0)
        throw FormatError("not a checkpoint file: " + path);
    const std::uint32_t version = read_u32_strict(is, "checkpoint");
    if (version != kCheckpointVersion)
        throw VersionError("unsupported checkpoint version " + std::to_string(version));
    const std::uint32_t cfg_len = read_u32_strict(is, "checkpoint");
    std::string cfg(cfg_len, '\0');
    is.read(cfg.data(), cfg_len);
    if (!is) throw FormatError("truncated checkpoint: " + path);

    GPTParams<Real> params = init_params<Real>(ModelConfig::from_text(cfg));
    auto named = params.named_params();
    std::map<std::string, Tensor<Real>*> by_name;
    for (auto& p : named) by_name[p.name] = p.tensor;

    const std::uint32_t count = read_u32_strict(is, "checkpoint");
    if (count != named.size())
        throw ShapeError("checkpoint tensor count " + std::to_string(count) + " does not match config");
    std::string prev;
    for (std::uint32_t t = 0; t < count; ++t) {
        const std::uint32_t name_len = read_u32_strict(is, "checkpoint");
        if (name_len > 4096) throw FormatError("implausible tensor name length");
        std::string name(name_len, '\0');
        is.read(name.data(), name_len);
        if (!is) throw FormatError("truncated checkpoint: " + path);
        if (t > 0 && !(prev < name)) throw FormatError("checkpoint tensors not in sorted order");
        prev = name;
        auto it = by_name.find(name);
        if (it == by_name.end()) throw ShapeError("unknown tensor in checkpoint: " + name);
        const int rows = static_cast<int>(read_u32_strict(is, "checkpoint"));
        const int cols = static_cast<int>(read_u32_strict(is, "checkpoint"));
        if (rows != it->second->rows || cols != it->second->cols)
            throw ShapeError("tensor " + name + " has shape " + std::to_string(rows) + "x" +
                             std::to_string(cols) + ", expected " + std::to_string(it->second->rows) + "x" +
                             std::to_string(it->second->cols));
        for (auto& x : it->second->v) x = static_cast<Real>(read_f32_strict(is, "checkpoint"));
    }
    is.peek();
    if (!is.eof()) throw FormatError("trailing bytes after checkpoint payload: " + path);
    return params;
}

}  // namespace relex
