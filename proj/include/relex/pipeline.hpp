#pragma once

// End-to-end pipeline: vocabulary and corpus preparation, source-model
// training at two sizes, embedding relearning for the (synthetic) target
// language, cross-size transform, embedding optimization, finetuning,
// evaluation, and generation. Every stage writes its artifacts under one
// output directory and appends a manifest record of parameter values and
// input/output content digests, so a finished directory is verifiable and
// reruns with the same seed are byte-identical.

#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "relex/common.hpp"
#include "relex/corpus.hpp"
#include "relex/eval.hpp"
#include "relex/generate.hpp"
#include "relex/model.hpp"
#include "relex/tokenizer.hpp"
#include "relex/training.hpp"
#include "relex/transform.hpp"

namespace relex {

enum class Stage { vocab, train_source, relearn, transform, optimize_embeddings, finetune, eval, generate };

inline const char* stage_name(Stage s) {
    switch (s) {
        case Stage::vocab: return "vocab";
        case Stage::train_source: return "train-source";
        case Stage::relearn: return "relearn";
        case Stage::transform: return "transform";
        case Stage::optimize_embeddings: return "optimize-embeddings";
        case Stage::finetune: return "finetune";
        case Stage::eval: return "eval";
        case Stage::generate: return "generate";
    }
    return "?";
}

inline const std::vector<Stage>& all_stages() {
    static const std::vector<Stage> order = {Stage::vocab,     Stage::train_source,
                                             Stage::relearn,   Stage::transform,
                                             Stage::optimize_embeddings, Stage::finetune,
                                             Stage::eval,      Stage::generate};
    return order;
}

inline std::vector<Stage> parse_stages(const std::string& csv) {
    if (csv.empty() || csv == "all") return all_stages();
    std::vector<Stage> out;
    std::istringstream is(csv);
    std::string item;
    while (std::getline(is, item, ',')) {
        bool found = false;
        for (Stage s : all_stages()) {
            if (item == stage_name(s)) {
                out.push_back(s);
                found = true;
                break;
            }
        }
        if (!found) throw UsageError("unknown stage: " + item);
    }
    // run in canonical order regardless of how they were listed
    std::vector<Stage> ordered;
    for (Stage s : all_stages())
        for (Stage r : out)
            if (r == s && (ordered.empty() || ordered.back() != s)) ordered.push_back(s);
    return ordered;
}

// ---------------------------------------------------------------------------
// Configuration: `key = value` lines, '#' comments, overridable per key.

struct PipelineConfig {
    std::vector<std::string> corpus;  // source-language text files
    std::string out_dir = "out";
    std::uint64_t seed = 1;
    std::string precision = "f64";  // f64 | f32
    int vocab_size = 512;
    double dev_fraction = 0.05;

    std::string synthetic_kind = "permutation";  // permutation | reversal
    int synthetic_window = 8;

    int small_layers = 4, small_d_model = 64, small_heads = 4, small_context = 128;
    bool medium_enabled = true;
    int medium_layers = 6, medium_d_model = 96, medium_heads = 6, medium_context = 128;

    double train_lr = 2e-3;
    int train_batch = 16, train_accum = 64, train_window = 128, train_epochs = 4;
    int plateau_patience = 2;
    double plateau_decay = 0.9;
    int stop_patience = 2;

    double relearn_lr = 2e-3;
    int relearn_epochs = 4;
    double optimize_lr = 1e-3;
    int optimize_epochs = 1;
    double finetune_lr = 1e-5;
    int finetune_epochs = 1;

    std::string transform_method = "lstsq";  // lstsq | procrustes | knn
    double transform_ridge = 1e-6;
    int transform_k = 10;

    int eval_window = 128, eval_stride = 64, eval_k = 50;

    int gen_beams = 5, gen_top_k = 50;
    double gen_top_p = 0.9, gen_temperature = 3.0;
    int gen_max_tokens = 40, gen_length_filter = 30;

    void set(const std::string& key, const std::string& value);
    void validate() const;
};

namespace detail {

inline std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline int parse_int(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        int x = std::stoi(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw UsageError("config key " + key + ": not an integer: '" + v + "'");
    }
}

inline double parse_double(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        double x = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw UsageError("config key " + key + ": not a number: '" + v + "'");
    }
}

inline bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw UsageError("config key " + key + ": not a boolean: '" + v + "'");
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    try {
        std::size_t used = 0;
        std::uint64_t x = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return x;
    } catch (const std::exception&) {
        throw UsageError("config key " + key + ": not an unsigned integer: '" + v + "'");
    }
}

inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return std::string(buf);
}

}  // namespace detail

inline void PipelineConfig::set(const std::string& key, const std::string& value) {
    using detail::parse_bool;
    using detail::parse_double;
    using detail::parse_int;
    using detail::parse_u64;
    if (key == "corpus") {
        corpus.clear();
        std::istringstream is(value);
        std::string p;
        while (std::getline(is, p, ','))
            if (!detail::trim(p).empty()) corpus.push_back(detail::trim(p));
    } else if (key == "out") out_dir = value;
    else if (key == "seed") seed = parse_u64(key, value);
    else if (key == "precision") precision = value;
    else if (key == "vocab_size") vocab_size = parse_int(key, value);
    else if (key == "dev_fraction") dev_fraction = parse_double(key, value);
    else if (key == "synthetic.kind") synthetic_kind = value;
    else if (key == "synthetic.window") synthetic_window = parse_int(key, value);
    else if (key == "small.layers") small_layers = parse_int(key, value);
    else if (key == "small.d_model") small_d_model = parse_int(key, value);
    else if (key == "small.heads") small_heads = parse_int(key, value);
    else if (key == "small.context") small_context = parse_int(key, value);
    else if (key == "medium.enabled") medium_enabled = parse_bool(key, value);
    else if (key == "medium.layers") medium_layers = parse_int(key, value);
    else if (key == "medium.d_model") medium_d_model = parse_int(key, value);
    else if (key == "medium.heads") medium_heads = parse_int(key, value);
    else if (key == "medium.context") medium_context = parse_int(key, value);
    else if (key == "train.lr") train_lr = parse_double(key, value);
    else if (key == "train.batch") train_batch = parse_int(key, value);
    else if (key == "train.accum") train_accum = parse_int(key, value);
    else if (key == "train.window") train_window = parse_int(key, value);
    else if (key == "train.epochs") train_epochs = parse_int(key, value);
    else if (key == "train.plateau_patience") plateau_patience = parse_int(key, value);
    else if (key == "train.plateau_decay") plateau_decay = parse_double(key, value);
    else if (key == "train.stop_patience") stop_patience = parse_int(key, value);
    else if (key == "relearn.lr") relearn_lr = parse_double(key, value);
    else if (key == "relearn.epochs") relearn_epochs = parse_int(key, value);
    else if (key == "optimize.lr") optimize_lr = parse_double(key, value);
    else if (key == "optimize.epochs") optimize_epochs = parse_int(key, value);
    else if (key == "finetune.lr") finetune_lr = parse_double(key, value);
    else if (key == "finetune.epochs") finetune_epochs = parse_int(key, value);
    else if (key == "transform.method") transform_method = value;
    else if (key == "transform.ridge") transform_ridge = parse_double(key, value);
    else if (key == "transform.k") transform_k = parse_int(key, value);
    else if (key == "eval.window") eval_window = parse_int(key, value);
    else if (key == "eval.stride") eval_stride = parse_int(key, value);
    else if (key == "eval.k") eval_k = parse_int(key, value);
    else if (key == "gen.beams") gen_beams = parse_int(key, value);
    else if (key == "gen.top_k") gen_top_k = parse_int(key, value);
    else if (key == "gen.top_p") gen_top_p = parse_double(key, value);
    else if (key == "gen.temperature") gen_temperature = parse_double(key, value);
    else if (key == "gen.max_tokens") gen_max_tokens = parse_int(key, value);
    else if (key == "gen.length_filter") gen_length_filter = parse_int(key, value);
    else throw UsageError("unknown config key: " + key);
}

inline void PipelineConfig::validate() const {
    if (out_dir.empty()) throw UsageError("config: out directory must be set");
    if (precision != "f64" && precision != "f32")
        throw UsageError("config: precision must be f64 or f32, got " + precision);
    if (synthetic_kind != "permutation" && synthetic_kind != "reversal")
        throw UsageError("config: synthetic.kind must be permutation or reversal");
    if (transform_method != "lstsq" && transform_method != "procrustes" && transform_method != "knn")
        throw UsageError("config: transform.method must be lstsq, procrustes or knn");
    if (!(dev_fraction > 0 && dev_fraction < 1)) throw UsageError("config: dev_fraction must be in (0,1)");
}

inline void apply_config_text(PipelineConfig& config, const std::string& text) {
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        line = detail::trim(line);
        if (line.empty()) continue;
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw UsageError("config line " + std::to_string(lineno) + ": expected key = value");
        config.set(detail::trim(line.substr(0, eq)), detail::trim(line.substr(eq + 1)));
    }
}

inline PipelineConfig load_config_file(const std::string& path) {
    PipelineConfig config;
    apply_config_text(config, read_text_file(path));
    return config;
}

// ---------------------------------------------------------------------------
// Manifest: one line per executed stage, space-separated key=value fields —
// stage, derived seed, parameters, then `in.<path>=<digest>` and
// `out.<path>=<digest>` with paths relative to the output directory.

struct ManifestRecord {
    std::string stage;
    std::vector<std::pair<std::string, std::string>> fields;  // in original order
};

inline std::vector<ManifestRecord> parse_manifest(const std::string& text) {
    std::vector<ManifestRecord> records;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#') continue;
        ManifestRecord rec;
        std::istringstream ls(line);
        std::string tok;
        while (ls >> tok) {
            const std::size_t eq = tok.find('=');
            if (eq == std::string::npos) throw FormatError("bad manifest field: " + tok);
            const std::string key = tok.substr(0, eq), value = tok.substr(eq + 1);
            if (key == "stage") rec.stage = value;
            else rec.fields.emplace_back(key, value);
        }
        if (rec.stage.empty()) throw FormatError("manifest line without stage: " + line);
        records.push_back(std::move(rec));
    }
    return records;
}

// Latest recorded digest per output artifact (relative path).
inline std::map<std::string, std::string> manifest_outputs(const std::vector<ManifestRecord>& records) {
    std::map<std::string, std::string> out;
    for (const auto& rec : records)
        for (const auto& [k, v] : rec.fields)
            if (k.rfind("out.", 0) == 0) out[k.substr(4)] = v;
    return out;
}

// Re-hashes every output artifact against the manifest. Returns problem
// descriptions; empty means the directory checks out.
inline std::vector<std::string> verify_output_dir(const std::string& dir) {
    namespace fs = std::filesystem;
    const std::string manifest_path = dir + "/manifest.txt";
    if (!fs::exists(manifest_path)) return {"no manifest.txt in " + dir};
    std::vector<std::string> problems;
    const auto outputs = manifest_outputs(parse_manifest(read_text_file(manifest_path)));
    if (outputs.empty()) problems.push_back("manifest lists no outputs");
    for (const auto& [rel, digest] : outputs) {
        const std::string path = dir + "/" + rel;
        if (!fs::exists(path)) {
            problems.push_back("missing artifact: " + rel);
            continue;
        }
        const std::string actual = file_digest(path);
        if (actual != digest)
            problems.push_back("digest mismatch: " + rel + " manifest=" + digest + " actual=" + actual);
    }
    return problems;
}

// ---------------------------------------------------------------------------
// The runner.

namespace detail {

struct LockFile {
    std::string path;
    bool owned = false;

    explicit LockFile(const std::string& p) : path(p) {
        if (std::filesystem::exists(path))
            throw Error("output directory is locked by another run (" + path +
                        "); remove the lock file if that run is gone");
        std::ofstream os(path);
        if (!os) throw Error("cannot create lock file: " + path);
        os << "locked\n";
        owned = true;
    }
    ~LockFile() {
        if (owned) std::filesystem::remove(path);
    }
    LockFile(const LockFile&) = delete;
    LockFile& operator=(const LockFile&) = delete;
};

}  // namespace detail

template <class Real>
class PipelineRunner {
  public:
    PipelineRunner(PipelineConfig config) : cfg_(std::move(config)) {
        cfg_.validate();
        std::filesystem::create_directories(cfg_.out_dir);
        const std::string manifest_path = path("manifest.txt");
        if (std::filesystem::exists(manifest_path))
            known_outputs_ = manifest_outputs(parse_manifest(read_text_file(manifest_path)));
    }

    void run(const std::vector<Stage>& stages) {
        detail::LockFile lock(path(".lock"));
        for (Stage s : stages) {
            switch (s) {
                case Stage::vocab: stage_vocab(); break;
                case Stage::train_source: stage_train_source(); break;
                case Stage::relearn: stage_relearn(); break;
                case Stage::transform: stage_transform(); break;
                case Stage::optimize_embeddings: stage_optimize(); break;
                case Stage::finetune: stage_finetune(); break;
                case Stage::eval: stage_eval(); break;
                case Stage::generate: stage_generate(); break;
            }
        }
    }

  private:
    PipelineConfig cfg_;
    std::map<std::string, std::string> known_outputs_;  // rel path -> digest from manifest

    std::string path(const std::string& rel) const { return cfg_.out_dir + "/" + rel; }

    std::uint64_t stage_seed(const char* stage) const { return derive_seed(cfg_.seed, stage); }

    // Resolve a required artifact produced by an earlier stage; verifies it
    // still matches the digest the manifest recorded for it.
    std::string require(const std::string& rel, const std::string& hint) {
        const std::string p = path(rel);
        if (!std::filesystem::exists(p))
            throw DependencyError("missing artifact " + rel + " — " + hint);
        const auto it = known_outputs_.find(rel);
        if (it != known_outputs_.end() && it->second != file_digest(p))
            throw Error("artifact " + rel +
                        " does not match the digest in manifest.txt; it was modified since its stage ran");
        return p;
    }

    bool artifact_exists(const std::string& rel) const { return std::filesystem::exists(path(rel)); }

    struct Record {
        std::string line;
        explicit Record(const char* stage, std::uint64_t seed) {
            line = std::string("stage=") + stage + " seed=" + std::to_string(seed);
        }
        void param(const std::string& k, const std::string& v) { line += " param." + k + "=" + v; }
        void param(const std::string& k, long v) { param(k, std::to_string(v)); }
        void param(const std::string& k, double v) { param(k, detail::fmt_double(v)); }
    };

    void commit(Record& rec, const std::vector<std::pair<std::string, std::string>>& inputs,
                const std::vector<std::string>& output_rels) {
        for (const auto& [name, file] : inputs) rec.line += " in." + name + "=" + file_digest(file);
        for (const auto& rel : output_rels) {
            const std::string digest = file_digest(path(rel));
            rec.line += " out." + rel + "=" + digest;
            known_outputs_[rel] = digest;
        }
        std::ofstream os(path("manifest.txt"), std::ios::app);
        if (!os) throw Error("cannot append to manifest.txt");
        os << rec.line << "\n";
    }

    TrainConfig base_train_config(double lr, int epochs, std::uint64_t seed, int window) const {
        TrainConfig tc;
        tc.learning_rate = lr;
        tc.accumulation_examples = cfg_.train_accum;
        tc.window_len = window;
        tc.batch_examples = cfg_.train_batch;
        tc.plateau_patience = cfg_.plateau_patience;
        tc.plateau_decay = cfg_.plateau_decay;
        tc.early_stop_patience = cfg_.stop_patience;
        tc.max_epochs = epochs;
        tc.seed = seed;
        return tc;
    }

    // Transforms documents while keeping the trailing end-of-document token
    // in place (the permutation fixes it; window reversal must not move it).
    static std::vector<std::vector<int>> transform_docs(const std::vector<std::vector<int>>& docs,
                                                        int id_space, const SyntheticMapping& map,
                                                        int eod_id) {
        std::vector<std::vector<int>> stripped = docs;
        for (auto& d : stripped)
            if (!d.empty() && d.back() == eod_id) d.pop_back();
        auto out = apply_synthetic_mapping(stripped, id_space, map);
        for (auto& d : out) d.push_back(eod_id);
        return out;
    }

    // ---- stages ----------------------------------------------------------

    void stage_vocab() {
        const std::uint64_t seed = stage_seed("vocab");
        if (cfg_.corpus.empty()) throw DependencyError("no corpus files configured — set `corpus`");
        for (const auto& p : cfg_.corpus)
            if (!std::filesystem::exists(p)) throw DependencyError("missing corpus file " + p);

        Corpus corpus = ingest_and_dedup(cfg_.corpus);
        std::vector<std::string> texts;
        for (const auto& d : corpus.documents) texts.push_back(d.text);
        Vocabulary vocab = train_bpe(texts, cfg_.vocab_size);
        save_vocabulary(vocab, path("vocab.txt"));

        auto [train_c, dev_c] = split_dev(corpus, cfg_.dev_fraction, derive_seed(seed, "split"));
        const auto tok_train = tokenize_corpus(train_c, vocab);
        const auto tok_dev = tokenize_corpus(dev_c, vocab);
        const int id_space = vocab.id_space();
        save_tokenized(tok_train, id_space, path("src.train.tok"));
        save_tokenized(tok_dev, id_space, path("src.dev.tok"));

        SyntheticMapping map;
        if (cfg_.synthetic_kind == "permutation") {
            // permute real tokens only; the end-of-document id stays fixed
            map.kind = SyntheticKind::token_permutation;
            map.permutation.resize(vocab.size());
            for (int i = 0; i < vocab.size(); ++i) map.permutation[i] = i;
            Rng rng(derive_seed(seed, "synthetic"));
            rng.shuffle(map.permutation);
            map.permutation.push_back(vocab.eod_id());
        } else {
            map.kind = SyntheticKind::local_word_reversal;
            map.window = cfg_.synthetic_window;
        }
        save_synthetic_mapping(map, path("synth-map.txt"));
        save_tokenized(transform_docs(tok_train, id_space, map, vocab.eod_id()), id_space,
                       path("tgt.train.tok"));
        save_tokenized(transform_docs(tok_dev, id_space, map, vocab.eod_id()), id_space, path("tgt.dev.tok"));

        Record rec("vocab", seed);
        rec.param("vocab_size", static_cast<long>(cfg_.vocab_size));
        rec.param("dev_fraction", cfg_.dev_fraction);
        rec.param("synthetic_kind", cfg_.synthetic_kind);
        if (cfg_.synthetic_kind == "reversal") rec.param("synthetic_window", static_cast<long>(cfg_.synthetic_window));
        std::vector<std::pair<std::string, std::string>> inputs;
        for (const auto& p : cfg_.corpus) inputs.emplace_back(p, p);
        commit(rec, inputs,
               {"vocab.txt", "src.train.tok", "src.dev.tok", "synth-map.txt", "tgt.train.tok", "tgt.dev.tok"});
    }

    void train_one_source(const char* label, int layers, int d_model, int heads, int context,
                          const TokenizedCorpus& train_tok, const TokenizedCorpus& dev_tok,
                          const std::string& ckpt_rel, const std::string& log_rel) {
        ModelConfig mc;
        mc.n_layers = layers;
        mc.d_model = d_model;
        mc.n_heads = heads;
        mc.context_len = context;
        mc.vocab_size = train_tok.id_space;
        mc.seed = stage_seed((std::string("init-") + label).c_str());
        GPTParams<Real> model = init_params<Real>(mc);
        TrainConfig tc = base_train_config(cfg_.train_lr, cfg_.train_epochs,
                                           stage_seed((std::string("train-") + label).c_str()),
                                           cfg_.train_window);
        TrainResult<Real> res = train(model, train_tok.docs, dev_tok.docs, tc, FreezeSpec::all());
        save_checkpoint(res.params, path(ckpt_rel));
        res.history.save(path(log_rel));
    }

    void stage_train_source() {
        const std::uint64_t seed = stage_seed("train-source");
        const std::string train_p = require("src.train.tok", "run the vocab stage first");
        const std::string dev_p = require("src.dev.tok", "run the vocab stage first");
        const TokenizedCorpus train_tok = load_tokenized(train_p);
        const TokenizedCorpus dev_tok = load_tokenized(dev_p);

        train_one_source("small", cfg_.small_layers, cfg_.small_d_model, cfg_.small_heads,
                         cfg_.small_context, train_tok, dev_tok, "src-small.ckpt", "src-small.log");
        std::vector<std::string> outputs = {"src-small.ckpt", "src-small.log"};
        if (cfg_.medium_enabled) {
            train_one_source("medium", cfg_.medium_layers, cfg_.medium_d_model, cfg_.medium_heads,
                             cfg_.medium_context, train_tok, dev_tok, "src-medium.ckpt", "src-medium.log");
            outputs.push_back("src-medium.ckpt");
            outputs.push_back("src-medium.log");
        }

        Record rec("train-source", seed);
        rec.param("lr", cfg_.train_lr);
        rec.param("epochs", static_cast<long>(cfg_.train_epochs));
        rec.param("window", static_cast<long>(cfg_.train_window));
        rec.param("medium", cfg_.medium_enabled ? "true" : "false");
        commit(rec, {{"src.train.tok", train_p}, {"src.dev.tok", dev_p}}, outputs);
    }

    void stage_relearn() {
        const std::uint64_t seed = stage_seed("relearn");
        const std::string src_p = require("src-small.ckpt", "run train-source first");
        const std::string train_p = require("tgt.train.tok", "run the vocab stage first");
        const std::string dev_p = require("tgt.dev.tok", "run the vocab stage first");
        GPTParams<Real> model = load_checkpoint<Real>(src_p);
        const TokenizedCorpus train_tok = load_tokenized(train_p);
        const TokenizedCorpus dev_tok = load_tokenized(dev_p);
        if (train_tok.id_space != model.config.vocab_size)
            throw ShapeError("relearn: corpus id space " + std::to_string(train_tok.id_space) +
                             " does not match checkpoint vocabulary " +
                             std::to_string(model.config.vocab_size));

        GPTParams<Real> swapped = swap_vocabulary(model, model.config.vocab_size, derive_seed(seed, "swap"));
        TrainConfig tc =
            base_train_config(cfg_.relearn_lr, cfg_.relearn_epochs, derive_seed(seed, "train"), cfg_.train_window);
        TrainResult<Real> res = train(swapped, train_tok.docs, dev_tok.docs, tc, FreezeSpec::lexical_only());
        save_checkpoint(res.params, path("tgt-small-rle.ckpt"));
        res.history.save(path("tgt-small-rle.log"));

        Record rec("relearn", seed);
        rec.param("lr", cfg_.relearn_lr);
        rec.param("epochs", static_cast<long>(cfg_.relearn_epochs));
        rec.param("window", static_cast<long>(cfg_.train_window));
        commit(rec, {{"src-small.ckpt", src_p}, {"tgt.train.tok", train_p}, {"tgt.dev.tok", dev_p}},
               {"tgt-small-rle.ckpt", "tgt-small-rle.log"});
    }

    void stage_transform() {
        const std::uint64_t seed = stage_seed("transform");
        const std::string small_p = require("src-small.ckpt", "run train-source first");
        const std::string medium_p =
            require("src-medium.ckpt", "run train-source with medium.enabled = true");
        const std::string rle_p = require("tgt-small-rle.ckpt", "run relearn first");
        GPTParams<Real> small = load_checkpoint<Real>(small_p);
        GPTParams<Real> medium = load_checkpoint<Real>(medium_p);
        GPTParams<Real> rle = load_checkpoint<Real>(rle_p);

        AnchorSet anchors;
        anchors.source = small.tok.to_mat().template cast<double>();
        anchors.target = medium.tok.to_mat().template cast<double>();
        const Mat<double> new_emb = rle.tok.to_mat().template cast<double>();

        Mat<double> init;
        std::vector<std::string> outputs;
        if (cfg_.transform_method == "knn") {
            init = knn_transform(new_emb, anchors, cfg_.transform_k);
        } else {
            LinearMap map = cfg_.transform_method == "lstsq" ? fit_lstsq(anchors, cfg_.transform_ridge)
                                                             : fit_procrustes(anchors);
            save_map(map, path("map.emb"));
            outputs.push_back("map.emb");
            init = apply_map(map, new_emb);
        }
        GPTParams<Real> target = swap_vocabulary(medium, init.template cast<Real>());
        save_checkpoint(target, path("tgt-medium-init.ckpt"));
        outputs.insert(outputs.begin(), "tgt-medium-init.ckpt");

        Record rec("transform", seed);
        rec.param("method", cfg_.transform_method);
        if (cfg_.transform_method == "lstsq") rec.param("ridge", cfg_.transform_ridge);
        if (cfg_.transform_method == "knn") rec.param("k", static_cast<long>(cfg_.transform_k));
        commit(rec,
               {{"src-small.ckpt", small_p}, {"src-medium.ckpt", medium_p}, {"tgt-small-rle.ckpt", rle_p}},
               outputs);
    }

    void stage_optimize() {
        const std::uint64_t seed = stage_seed("optimize-embeddings");
        const std::string init_p = require("tgt-medium-init.ckpt", "run transform first");
        const std::string train_p = require("tgt.train.tok", "run the vocab stage first");
        const std::string dev_p = require("tgt.dev.tok", "run the vocab stage first");
        GPTParams<Real> model = load_checkpoint<Real>(init_p);
        const TokenizedCorpus train_tok = load_tokenized(train_p);
        const TokenizedCorpus dev_tok = load_tokenized(dev_p);

        TrainConfig tc =
            base_train_config(cfg_.optimize_lr, cfg_.optimize_epochs, derive_seed(seed, "train"), cfg_.train_window);
        tc.early_stop_patience = 0;  // a fixed extra-epochs budget, no stopping
        TrainResult<Real> res = train(model, train_tok.docs, dev_tok.docs, tc, FreezeSpec::lexical_only());
        save_checkpoint(res.params, path("tgt-medium-rle.ckpt"));
        res.history.save(path("tgt-medium-rle.log"));

        Record rec("optimize-embeddings", seed);
        rec.param("lr", cfg_.optimize_lr);
        rec.param("epochs", static_cast<long>(cfg_.optimize_epochs));
        commit(rec, {{"tgt-medium-init.ckpt", init_p}, {"tgt.train.tok", train_p}, {"tgt.dev.tok", dev_p}},
               {"tgt-medium-rle.ckpt", "tgt-medium-rle.log"});
    }

    // The most-finished target model available.
    std::string final_target_rel() const {
        for (const char* rel : {"tgt-fine.ckpt", "tgt-medium-rle.ckpt", "tgt-small-rle.ckpt"})
            if (artifact_exists(rel)) return rel;
        throw DependencyError("missing artifact tgt-small-rle.ckpt — run relearn first");
    }

    void stage_finetune() {
        const std::uint64_t seed = stage_seed("finetune");
        const std::string base_rel =
            artifact_exists("tgt-medium-rle.ckpt") ? "tgt-medium-rle.ckpt" : "tgt-small-rle.ckpt";
        const std::string base_p = require(base_rel, "run relearn (and optionally optimize-embeddings) first");
        const std::string train_p = require("tgt.train.tok", "run the vocab stage first");
        const std::string dev_p = require("tgt.dev.tok", "run the vocab stage first");
        GPTParams<Real> model = load_checkpoint<Real>(base_p);
        const TokenizedCorpus train_tok = load_tokenized(train_p);
        const TokenizedCorpus dev_tok = load_tokenized(dev_p);

        TrainConfig tc = base_train_config(cfg_.finetune_lr, cfg_.finetune_epochs, derive_seed(seed, "train"),
                                           model.config.context_len);
        TrainResult<Real> res = train(model, train_tok.docs, dev_tok.docs, tc, FreezeSpec::all());
        save_checkpoint(res.params, path("tgt-fine.ckpt"));
        res.history.save(path("tgt-fine.log"));

        Record rec("finetune", seed);
        rec.param("lr", cfg_.finetune_lr);
        rec.param("epochs", static_cast<long>(cfg_.finetune_epochs));
        rec.param("base", base_rel);
        commit(rec, {{base_rel, base_p}, {"tgt.train.tok", train_p}, {"tgt.dev.tok", dev_p}},
               {"tgt-fine.ckpt", "tgt-fine.log"});
    }

    void stage_eval() {
        const std::uint64_t seed = stage_seed("eval");
        const std::string small_p = require("src-small.ckpt", "run train-source first");
        const std::string src_dev_p = require("src.dev.tok", "run the vocab stage first");
        const std::string tgt_dev_p = require("tgt.dev.tok", "run the vocab stage first");
        const std::string target_rel = final_target_rel();
        const std::string target_p = require(target_rel, "run relearn first");

        GPTParams<Real> source = load_checkpoint<Real>(small_p);
        GPTParams<Real> target = load_checkpoint<Real>(target_p);
        const TokenizedCorpus src_dev = load_tokenized(src_dev_p);
        const TokenizedCorpus tgt_dev = load_tokenized(tgt_dev_p);

        const PerplexityReport ppl_src =
            corpus_perplexity(source, src_dev.docs, cfg_.eval_window, cfg_.eval_stride);
        const PerplexityReport ppl_tgt =
            corpus_perplexity(target, tgt_dev.docs, cfg_.eval_window, cfg_.eval_stride);

        std::ostringstream report;
        report.precision(17);
        report << "ppl.window " << cfg_.eval_window << "\n"
               << "ppl.stride " << cfg_.eval_stride << "\n"
               << "ppl.source " << ppl_src.perplexity << "\n"
               << "ppl.source_tokens " << ppl_src.scored_tokens << "\n"
               << "ppl.target " << ppl_tgt.perplexity << "\n"
               << "ppl.target_tokens " << ppl_tgt.scored_tokens << "\n";

        Record rec("eval", seed);
        rec.param("target", target_rel);
        rec.param("ppl_source", ppl_src.perplexity);
        rec.param("ppl_target", ppl_tgt.perplexity);

        std::vector<std::pair<std::string, std::string>> inputs = {{"src-small.ckpt", small_p},
                                                                   {"src.dev.tok", src_dev_p},
                                                                   {target_rel, target_p},
                                                                   {"tgt.dev.tok", tgt_dev_p}};
        if (artifact_exists("src-medium.ckpt") && artifact_exists("tgt-small-rle.ckpt") &&
            artifact_exists("tgt-medium-rle.ckpt")) {
            const std::string medium_p = require("src-medium.ckpt", "");
            const std::string rle_small_p = require("tgt-small-rle.ckpt", "");
            const std::string rle_medium_p = require("tgt-medium-rle.ckpt", "");
            GPTParams<Real> medium = load_checkpoint<Real>(medium_p);
            GPTParams<Real> rle_small = load_checkpoint<Real>(rle_small_p);
            GPTParams<Real> rle_medium = load_checkpoint<Real>(rle_medium_p);
            const double v = intersection_at_k(rle_small.tok.to_mat().template cast<double>(),
                                               source.tok.to_mat().template cast<double>(),
                                               rle_medium.tok.to_mat().template cast<double>(),
                                               medium.tok.to_mat().template cast<double>(), cfg_.eval_k);
            report << "int_at_k.k " << cfg_.eval_k << "\n";
            report << "int_at_k " << v << "\n";
            rec.param("int_at_k", v);
            inputs.push_back({"src-medium.ckpt", medium_p});
            inputs.push_back({"tgt-small-rle.ckpt", rle_small_p});
            inputs.push_back({"tgt-medium-rle.ckpt", rle_medium_p});
        }
        write_text_file(path("eval.txt"), report.str());
        commit(rec, inputs, {"eval.txt"});
    }

    void stage_generate() {
        const std::uint64_t seed = stage_seed("generate");
        const std::string vocab_p = require("vocab.txt", "run the vocab stage first");
        const std::string target_rel = final_target_rel();
        const std::string target_p = require(target_rel, "run relearn first");
        Vocabulary vocab = load_vocabulary(vocab_p);
        GPTParams<Real> model = load_checkpoint<Real>(target_p);
        if (model.config.vocab_size != vocab.id_space())
            throw ShapeError("generate: checkpoint vocabulary does not match vocab.txt");

        GenerationConfig gc;
        gc.num_beams = cfg_.gen_beams;
        gc.top_k = cfg_.gen_top_k;
        gc.top_p = cfg_.gen_top_p;
        gc.temperature = cfg_.gen_temperature;
        gc.max_tokens = cfg_.gen_max_tokens;
        gc.length_filter = cfg_.gen_length_filter;
        gc.seed = seed;
        const GenerationResult res = generate(model, gc, {}, vocab.eod_id());

        // target ids render through the inverse synthetic mapping when one
        // is present, turning generated target text back into source bytes
        SyntheticMapping inverse;
        bool have_map = false;
        if (artifact_exists("synth-map.txt")) {
            inverse = load_synthetic_mapping(path("synth-map.txt")).inverted();
            have_map = true;
        }
        auto render = [&](const GeneratedSequence& s) {
            std::vector<int> ids = s.tokens;
            if (!ids.empty() && ids.back() == vocab.eod_id()) ids.pop_back();
            if (have_map) ids = apply_synthetic_mapping({ids}, vocab.id_space(), inverse)[0];
            return detail::escape_token(decode(vocab, ids));
        };
        std::ostringstream os;
        os.precision(17);
        for (const auto& s : res.kept) os << s.score << "\t" << render(s) << "\n";
        for (const auto& s : res.filtered) os << "# filtered " << s.score << "\t" << render(s) << "\n";
        write_text_file(path("samples.txt"), os.str());

        Record rec("generate", seed);
        rec.param("beams", static_cast<long>(cfg_.gen_beams));
        rec.param("top_k", static_cast<long>(cfg_.gen_top_k));
        rec.param("top_p", cfg_.gen_top_p);
        rec.param("temperature", cfg_.gen_temperature);
        rec.param("max_tokens", static_cast<long>(cfg_.gen_max_tokens));
        rec.param("length_filter", static_cast<long>(cfg_.gen_length_filter));
        commit(rec, {{target_rel, target_p}, {"vocab.txt", vocab_p}}, {"samples.txt"});
    }
};

inline void run_pipeline(const PipelineConfig& config, const std::vector<Stage>& stages) {
    config.validate();
    if (config.precision == "f32")
        PipelineRunner<float>(config).run(stages);
    else
        PipelineRunner<double>(config).run(stages);
}

}  // namespace relex
