// Command line for the relex library: vocabulary building, model training,
// lexical-embedding relearning and transplant, evaluation, generation, and
// the end-to-end pipeline.
//
// Exit codes: 0 success, 1 bad usage, 2 missing or invalid artifacts,
// 3 numerical failure.

#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "relex/autodiff.hpp"
#include "relex/common.hpp"
#include "relex/corpus.hpp"
#include "relex/eval.hpp"
#include "relex/generate.hpp"
#include "relex/model.hpp"
#include "relex/pipeline.hpp"
#include "relex/tokenizer.hpp"
#include "relex/training.hpp"
#include "relex/transform.hpp"

namespace {

using namespace relex;

template <class F>
void with_precision(const std::string& precision, F&& f) {
    if (precision == "f64") f(double{});
    else if (precision == "f32") f(float{});
    else throw UsageError("precision must be f64 or f32, got " + precision);
}

bool ends_with(const std::string& s, const std::string& suffix) {
    return s.size() >= suffix.size() && s.compare(s.size() - suffix.size(), suffix.size(), suffix) == 0;
}

// Embedding matrices come either from a checkpoint (its token table) or from
// a standalone embedding file.
Mat<double> load_any_embedding(const std::string& path) {
    if (ends_with(path, ".ckpt")) return load_checkpoint<double>(path).tok.to_mat();
    return load_embedding<double>(path);
}

void write_output(const std::string& path, const std::string& text) {
    if (path == "-") std::cout << text;
    else write_text_file(path, text);
}

// Token ids -> display names; the id one past the vocabulary is the
// end-of-document marker.
std::vector<std::string> name_table(const Vocabulary& vocab) {
    std::vector<std::string> names(vocab.token_table.begin(), vocab.token_table.end());
    names.push_back("<eod>");
    return names;
}

// ---------------------------------------------------------------------------
// Shared corpus input: either text files plus a vocabulary, or pre-tokenized
// files produced by `pipeline` / `synth-lang`.

struct CorpusInput {
    std::vector<std::string> corpus;
    std::string vocab;
    std::string tok;
    std::string dev_tok;
    double dev_fraction = 0.05;

    void attach(CLI::App* cmd, bool with_dev) {
        cmd->add_option("--corpus", corpus, "source text files (repeatable)");
        cmd->add_option("--vocab", vocab, "vocabulary file (required with --corpus)");
        cmd->add_option("--tok", tok, "pre-tokenized corpus file (alternative to --corpus)");
        if (with_dev) {
            cmd->add_option("--dev-tok", dev_tok, "pre-tokenized dev corpus (required with --tok)");
            cmd->add_option("--dev-fraction", dev_fraction, "dev split fraction for --corpus input")
                ->capture_default_str();
        }
    }
};

struct LoadedDocs {
    std::vector<std::vector<int>> train, dev;
    int id_space = 0;
};

LoadedDocs load_docs(const CorpusInput& in, std::uint64_t seed, bool want_dev) {
    LoadedDocs out;
    if (!in.tok.empty()) {
        if (!in.corpus.empty()) throw UsageError("give either --tok or --corpus, not both");
        TokenizedCorpus t = load_tokenized(in.tok);
        out.train = std::move(t.docs);
        out.id_space = t.id_space;
        if (!in.dev_tok.empty()) {
            TokenizedCorpus d = load_tokenized(in.dev_tok);
            if (d.id_space != out.id_space)
                throw Error("train and dev tokenized corpora use different id spaces");
            out.dev = std::move(d.docs);
        } else if (want_dev) {
            throw UsageError("--dev-tok is required with --tok");
        }
        return out;
    }
    if (in.corpus.empty()) throw UsageError("provide --corpus files or a --tok file");
    if (in.vocab.empty()) throw UsageError("--vocab is required with --corpus");
    const Vocabulary vocab = load_vocabulary(in.vocab);
    const Corpus corpus = ingest_and_dedup(in.corpus);
    if (want_dev) {
        auto [train_c, dev_c] = split_dev(corpus, in.dev_fraction, derive_seed(seed, "split"));
        out.train = tokenize_corpus(train_c, vocab);
        out.dev = tokenize_corpus(dev_c, vocab);
    } else {
        out.train = tokenize_corpus(corpus, vocab);
    }
    out.id_space = vocab.id_space();
    return out;
}

// ---------------------------------------------------------------------------
// Subcommands. Each holds its options and a run() invoked after parsing.

struct VocabCmd {
    std::vector<std::string> corpus;
    int size = 512;
    std::string out = "vocab.txt";

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("vocab", "learn a byte-pair vocabulary from text files");
        cmd->add_option("--corpus", corpus, "source text files (repeatable)")->required();
        cmd->add_option("--size", size, "target vocabulary size")->capture_default_str();
        cmd->add_option("--out", out, "output vocabulary file")->capture_default_str();
        cmd->callback([this] { run(); });
    }
    void run() const {
        const Corpus corpus = ingest_and_dedup(this->corpus);
        std::vector<std::string> texts;
        for (const auto& d : corpus.documents) texts.push_back(d.text);
        const Vocabulary vocab = train_bpe(texts, size);
        save_vocabulary(vocab, out);
        std::cout << "tokens " << vocab.size() << "\nmerges " << vocab.merges.size() << "\n";
    }
};

struct TrainCmd {
    CorpusInput input;
    int layers = 4, d_model = 64, heads = 4, context = 128;
    double lr = 2e-3, plateau_decay = 0.9;
    int batch = 16, accum = 64, window = 128, epochs = 4, plateau_patience = 2, stop_patience = 2;
    std::uint64_t seed = 1;
    std::string precision = "f64", out = "model.ckpt", log;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("train", "train a model from scratch");
        input.attach(cmd, true);
        cmd->add_option("--layers", layers)->capture_default_str();
        cmd->add_option("--d-model", d_model)->capture_default_str();
        cmd->add_option("--heads", heads)->capture_default_str();
        cmd->add_option("--context", context)->capture_default_str();
        add_train_options(cmd);
        cmd->add_option("--out", out, "output checkpoint")->capture_default_str();
        cmd->callback([this] { run(); });
    }
    void add_train_options(CLI::App* cmd) {
        cmd->add_option("--lr", lr)->capture_default_str();
        cmd->add_option("--batch", batch)->capture_default_str();
        cmd->add_option("--accum", accum, "examples per optimizer step")->capture_default_str();
        cmd->add_option("--window", window, "training window length")->capture_default_str();
        cmd->add_option("--epochs", epochs)->capture_default_str();
        cmd->add_option("--plateau-patience", plateau_patience)->capture_default_str();
        cmd->add_option("--plateau-decay", plateau_decay)->capture_default_str();
        cmd->add_option("--stop-patience", stop_patience, "0 disables early stopping")->capture_default_str();
        cmd->add_option("--seed", seed)->capture_default_str();
        cmd->add_option("--precision", precision, "f64 or f32")->capture_default_str();
        cmd->add_option("--log", log, "write the step/loss history here");
    }
    TrainConfig train_config(double step_lr, int max_epochs) const {
        TrainConfig tc;
        tc.learning_rate = step_lr;
        tc.accumulation_examples = accum;
        tc.window_len = window;
        tc.batch_examples = batch;
        tc.plateau_patience = plateau_patience;
        tc.plateau_decay = plateau_decay;
        tc.early_stop_patience = stop_patience;
        tc.max_epochs = max_epochs;
        tc.seed = derive_seed(seed, "train");
        return tc;
    }
    void run() const {
        with_precision(precision, [&](auto real) {
            using Real = decltype(real);
            const LoadedDocs docs = load_docs(input, seed, true);
            ModelConfig mc;
            mc.n_layers = layers;
            mc.d_model = d_model;
            mc.n_heads = heads;
            mc.context_len = context;
            mc.vocab_size = docs.id_space;
            mc.seed = derive_seed(seed, "init");
            GPTParams<Real> model = init_params<Real>(mc);
            TrainResult<Real> res = train(model, docs.train, docs.dev, train_config(lr, epochs), FreezeSpec::all());
            save_checkpoint(res.params, out);
            if (!log.empty()) res.history.save(log);
            std::cout.precision(17);
            std::cout << "best_dev_loss " << res.best_dev_loss << "\nstop " << res.history.stop_reason << "\n";
        });
    }
};

struct RelearnCmd {
    TrainCmd base;  // reuses the training hyper-parameter options
    std::string checkpoint;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("relearn",
                                       "relearn only the lexical embeddings of a trained model on a new corpus");
        cmd->add_option("--checkpoint", checkpoint, "source model checkpoint")->required();
        base.input.attach(cmd, true);
        base.add_train_options(cmd);
        base.out = "relearned.ckpt";
        cmd->add_option("--out", base.out, "output checkpoint")->capture_default_str();
        cmd->callback([this] { run(); });
    }
    void run() const {
        with_precision(base.precision, [&](auto real) {
            using Real = decltype(real);
            const LoadedDocs docs = load_docs(base.input, base.seed, true);
            GPTParams<Real> model = load_checkpoint<Real>(checkpoint);
            GPTParams<Real> swapped = swap_vocabulary(model, docs.id_space, derive_seed(base.seed, "swap"));
            TrainResult<Real> res = train(swapped, docs.train, docs.dev, base.train_config(base.lr, base.epochs),
                                          FreezeSpec::lexical_only());
            save_checkpoint(res.params, base.out);
            if (!base.log.empty()) res.history.save(base.log);
            std::cout.precision(17);
            std::cout << "best_dev_loss " << res.best_dev_loss << "\nstop " << res.history.stop_reason << "\n";
        });
    }
};

struct LrFindCmd {
    CorpusInput input;
    std::string checkpoint, freeze = "all", precision = "f64";
    double lr_min = 1e-6, lr_max = 1.0;
    int steps = 60, batch = 16, window = 128;
    std::uint64_t seed = 1;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("lr-find", "sweep learning rates geometrically and suggest one");
        cmd->add_option("--checkpoint", checkpoint, "model checkpoint to probe")->required();
        input.attach(cmd, false);
        cmd->add_option("--lr-min", lr_min)->capture_default_str();
        cmd->add_option("--lr-max", lr_max)->capture_default_str();
        cmd->add_option("--steps", steps)->capture_default_str();
        cmd->add_option("--batch", batch)->capture_default_str();
        cmd->add_option("--window", window)->capture_default_str();
        cmd->add_option("--freeze", freeze, "all or lexical: which parameters step")->capture_default_str();
        cmd->add_option("--seed", seed)->capture_default_str();
        cmd->add_option("--precision", precision)->capture_default_str();
        cmd->callback([this] { run(); });
    }
    void run() const {
        with_precision(precision, [&](auto real) {
            using Real = decltype(real);
            GPTParams<Real> model = load_checkpoint<Real>(checkpoint);
            const LoadedDocs docs = load_docs(input, seed, false);
            if (docs.id_space != model.config.vocab_size)
                throw ShapeError("corpus id space does not match checkpoint vocabulary");
            if (window > model.config.context_len + 1)
                throw Error("window exceeds the model context");
            if (freeze == "lexical") model.set_trainable(FreezeSpec::lexical_only());
            else if (freeze == "all") model.set_trainable(FreezeSpec::all());
            else throw UsageError("--freeze must be all or lexical");

            std::vector<Batch> batches =
                bucketed_batches(make_windows(docs.train, window), batch, derive_seed(seed, "batches"));
            if (batches.empty()) throw Error("corpus too small for a single batch");
            AdamState<Real> opt;
            std::size_t next = 0;
            auto step = [&](double lr) {
                const Batch& b = batches[next++ % batches.size()];
                for (auto& p : model.named_params())
                    if (p.tensor->requires_grad) p.tensor->zero_grad();
                Tape<Real> tape;
                auto* logits = gpt_forward(tape, model, b.ids, b.examples, b.len);
                auto* loss = tape.cross_entropy_sum(logits, b.targets, b.mask);
                tape.backward(loss);
                const double tokens = static_cast<double>(b.token_count());
                for (auto& p : model.named_params())
                    if (p.tensor->requires_grad)
                        for (auto& g : p.tensor->g) g = static_cast<Real>(g / tokens);
                adam_step(model, opt, lr);
                return static_cast<double>(loss->v[0]) / tokens;
            };
            const LrRangeResult res = lr_range_test(step, lr_min, lr_max, steps);
            std::cout.precision(17);
            for (std::size_t i = 0; i < res.lrs.size(); ++i)
                std::cout << res.lrs[i] << "\t" << res.losses[i] << "\t" << res.smoothed[i] << "\n";
            std::cout << "suggestion " << res.suggestion << "\n";
        });
    }
};

struct TransformCmd {
    std::string source, target, embeddings, method = "lstsq", map_out, out;
    double ridge = 1e-6;
    int k = 10;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand(
            "transform", "map embeddings into another model's space using paired anchor embeddings");
        cmd->add_option("--source", source, "checkpoint providing source-space anchors")->required();
        cmd->add_option("--target", target, "checkpoint providing target-space anchors")->required();
        cmd->add_option("--embeddings", embeddings, "embeddings to map (.ckpt or embedding file)")->required();
        cmd->add_option("--method", method, "lstsq, procrustes or knn")->capture_default_str();
        cmd->add_option("--ridge", ridge, "lstsq ridge strength")->capture_default_str();
        cmd->add_option("--k", k, "knn neighbour count")->capture_default_str();
        cmd->add_option("--map-out", map_out, "also save the fitted linear map here");
        cmd->add_option("--out", out, "output (.ckpt swaps into the target model, otherwise embedding file)")
            ->required();
        cmd->callback([this] { run(); });
    }
    void run() const {
        AnchorSet anchors;
        anchors.source = load_any_embedding(source);
        anchors.target = load_any_embedding(target);
        const Mat<double> emb = load_any_embedding(embeddings);

        Mat<double> mapped;
        if (method == "knn") {
            mapped = knn_transform(emb, anchors, k);
        } else if (method == "lstsq" || method == "procrustes") {
            const LinearMap map = method == "lstsq" ? fit_lstsq(anchors, ridge) : fit_procrustes(anchors);
            if (!map_out.empty()) save_map(map, map_out);
            mapped = apply_map(map, emb);
            std::cout.precision(17);
            std::cout << "residual " << map.residual << "\n";
        } else {
            throw UsageError("--method must be lstsq, procrustes or knn");
        }
        if (ends_with(out, ".ckpt")) {
            GPTParams<double> model = load_checkpoint<double>(target);
            GPTParams<double> swapped = swap_vocabulary(model, mapped);
            save_checkpoint(swapped, out);
        } else {
            save_embedding(mapped, out, method);
        }
    }
};

struct EvalPplCmd {
    CorpusInput input;
    std::string checkpoint, precision = "f64";
    int window = 128, stride = 64;
    std::uint64_t seed = 1;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("eval-ppl", "strided perplexity of a model over a corpus");
        cmd->add_option("--checkpoint", checkpoint)->required();
        input.attach(cmd, false);
        cmd->add_option("--window", window)->capture_default_str();
        cmd->add_option("--stride", stride)->capture_default_str();
        cmd->add_option("--precision", precision)->capture_default_str();
        cmd->callback([this] { run(); });
    }
    void run() const {
        with_precision(precision, [&](auto real) {
            using Real = decltype(real);
            GPTParams<Real> model = load_checkpoint<Real>(checkpoint);
            const LoadedDocs docs = load_docs(input, seed, false);
            if (docs.id_space != model.config.vocab_size)
                throw ShapeError("corpus id space does not match checkpoint vocabulary");
            const PerplexityReport rep = corpus_perplexity(model, docs.train, window, stride);
            std::cout.precision(17);
            std::cout << "perplexity " << rep.perplexity << "\nmean_nll " << rep.mean_nll << "\nscored_tokens "
                      << rep.scored_tokens << "\n";
        });
    }
};

struct EvalIntCmd {
    std::string emb_a, anchors_a, emb_b, anchors_b;
    int k = 50;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand(
            "eval-int", "agreement of two embedding spaces: shared fraction of k-nearest anchors");
        cmd->add_option("--emb-a", emb_a)->required();
        cmd->add_option("--anchors-a", anchors_a)->required();
        cmd->add_option("--emb-b", emb_b)->required();
        cmd->add_option("--anchors-b", anchors_b)->required();
        cmd->add_option("--k", k)->capture_default_str();
        cmd->callback([this] { run(); });
    }
    void run() const {
        const double v = intersection_at_k(load_any_embedding(emb_a), load_any_embedding(anchors_a),
                                           load_any_embedding(emb_b), load_any_embedding(anchors_b), k);
        std::cout.precision(17);
        std::cout << "int_at_k " << v << "\n";
    }
};

struct AlignCmd {
    std::string target, anchor, vocab_target, vocab_anchor, out = "-";
    int top = 5;

    void attach(CLI::App& app) {
        auto* cmd =
            app.add_subcommand("align", "tabulate nearest target tokens for each anchor embedding row");
        cmd->add_option("--target", target, "target embeddings (.ckpt or embedding file)")->required();
        cmd->add_option("--anchor", anchor, "anchor embeddings (.ckpt or embedding file)")->required();
        cmd->add_option("--vocab-target", vocab_target, "names target rows (ids otherwise)");
        cmd->add_option("--vocab-anchor", vocab_anchor, "names anchor rows (ids otherwise)");
        cmd->add_option("--top", top, "neighbours per row")->capture_default_str();
        cmd->add_option("--out", out, "output file, - for stdout")->capture_default_str();
        cmd->callback([this] { run(); });
    }
    static std::vector<std::string> names_for(const std::string& vocab_path, int rows) {
        std::vector<std::string> names;
        if (!vocab_path.empty()) names = name_table(load_vocabulary(vocab_path));
        for (int i = static_cast<int>(names.size()); i < rows; ++i) names.push_back("#" + std::to_string(i));
        return names;
    }
    void run() const {
        const Mat<double> emb_t = load_any_embedding(target);
        const Mat<double> emb_a = load_any_embedding(anchor);
        const AlignmentTable table = nearest_neighbor_alignment(emb_t, emb_a, top);
        write_output(out, alignment_to_tsv(table, names_for(vocab_anchor, emb_a.rows),
                                           names_for(vocab_target, emb_t.rows)));
    }
};

struct GenerateCmd {
    std::string checkpoint, vocab, prompt, precision = "f64", out = "-";
    GenerationConfig gc;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("generate", "sample text with stochastic beam search");
        cmd->add_option("--checkpoint", checkpoint)->required();
        cmd->add_option("--vocab", vocab)->required();
        cmd->add_option("--prompt", prompt, "prompt text (unconditioned when omitted)");
        cmd->add_option("--beams", gc.num_beams)->capture_default_str();
        cmd->add_option("--top-k", gc.top_k)->capture_default_str();
        cmd->add_option("--top-p", gc.top_p)->capture_default_str();
        cmd->add_option("--temperature", gc.temperature)->capture_default_str();
        cmd->add_option("--max-tokens", gc.max_tokens)->capture_default_str();
        cmd->add_option("--length-filter", gc.length_filter, "minimum kept length, 0 disables")
            ->capture_default_str();
        cmd->add_option("--seed", gc.seed)->capture_default_str();
        cmd->add_option("--precision", precision)->capture_default_str();
        cmd->add_option("--out", out, "output file, - for stdout")->capture_default_str();
        cmd->callback([this] { run(); });
    }
    void run() const {
        with_precision(precision, [&](auto real) {
            using Real = decltype(real);
            GPTParams<Real> model = load_checkpoint<Real>(checkpoint);
            const Vocabulary v = load_vocabulary(vocab);
            if (model.config.vocab_size != v.id_space())
                throw ShapeError("checkpoint vocabulary does not match the vocabulary file");
            const std::vector<int> prompt_ids = prompt.empty() ? std::vector<int>{} : encode(v, prompt);
            const GenerationResult res = generate(model, gc, prompt_ids, v.eod_id());
            auto render = [&](const GeneratedSequence& s) {
                std::vector<int> ids = s.tokens;
                if (!ids.empty() && ids.back() == v.eod_id()) ids.pop_back();
                return detail::escape_token(decode(v, ids));
            };
            std::ostringstream os;
            os.precision(17);
            for (const auto& s : res.kept) os << s.score << "\t" << render(s) << "\n";
            for (const auto& s : res.filtered) os << "# filtered " << s.score << "\t" << render(s) << "\n";
            write_output(out, os.str());
        });
    }
};

struct SynthLangCmd {
    std::string tok, kind = "permutation", out, map_out;
    int window = 8;
    std::uint64_t seed = 1;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("synth-lang",
                                       "derive a synthetic language from a tokenized corpus");
        cmd->add_option("--tok", tok, "tokenized corpus to transform")->required();
        cmd->add_option("--kind", kind, "permutation or reversal")->capture_default_str();
        cmd->add_option("--window", window, "reversal window")->capture_default_str();
        cmd->add_option("--seed", seed)->capture_default_str();
        cmd->add_option("--out", out, "output tokenized corpus")->required();
        cmd->add_option("--map-out", map_out, "also save the mapping here");
        cmd->callback([this] { run(); });
    }
    void run() const {
        const TokenizedCorpus t = load_tokenized(tok);
        SyntheticLanguageSpec spec;
        if (kind == "permutation") spec.kind = SyntheticKind::token_permutation;
        else if (kind == "reversal") spec.kind = SyntheticKind::local_word_reversal;
        else throw UsageError("--kind must be permutation or reversal");
        spec.seed = seed;
        spec.window = window;
        auto [docs, map] = make_synthetic_language(t.docs, t.id_space, spec);
        save_tokenized(docs, t.id_space, out);
        if (!map_out.empty()) save_synthetic_mapping(map, map_out);
        std::cout << "documents " << docs.size() << "\n";
    }
};

struct PipelineCmd {
    std::string config_file, stages = "all", out_override;
    std::vector<std::string> sets, corpus;
    std::optional<std::uint64_t> seed_override;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("pipeline", "run the end-to-end recycling pipeline");
        cmd->add_option("--config", config_file, "key = value configuration file");
        cmd->add_option("--set", sets, "override a config key, e.g. --set train.epochs=2 (repeatable)");
        cmd->add_option("--stages", stages, "comma-separated stage list, or all")->capture_default_str();
        cmd->add_option("--corpus", corpus, "source text files (repeatable)");
        cmd->add_option("--out", out_override, "output directory");
        cmd->add_option("--seed", seed_override, "master seed");
        cmd->callback([this] { run(); });
    }
    void run() const {
        PipelineConfig pc;
        if (!config_file.empty()) pc = load_config_file(config_file);
        for (const auto& kv : sets) {
            const std::size_t eq = kv.find('=');
            if (eq == std::string::npos) throw UsageError("--set expects key=value, got " + kv);
            pc.set(kv.substr(0, eq), kv.substr(eq + 1));
        }
        if (!corpus.empty()) pc.corpus = corpus;
        if (!out_override.empty()) pc.out_dir = out_override;
        if (seed_override) pc.seed = *seed_override;
        const std::vector<Stage> run_stages = parse_stages(stages);
        run_pipeline(pc, run_stages);
        std::cout << "pipeline complete: " << pc.out_dir << "\n";
    }
};

struct VerifyCmd {
    std::string dir;

    void attach(CLI::App& app) {
        auto* cmd = app.add_subcommand("verify", "re-hash a pipeline output directory against its manifest");
        cmd->add_option("--dir", dir, "pipeline output directory")->required();
        cmd->callback([this] { run(); });
    }
    void run() const {
        const std::vector<std::string> problems = verify_output_dir(dir);
        if (problems.empty()) {
            std::cout << "ok\n";
            return;
        }
        for (const auto& p : problems) std::cout << p << "\n";
        throw DependencyError(std::to_string(problems.size()) + " problem(s) found in " + dir);
    }
};

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"recycle a trained language model onto a new vocabulary"};
    app.require_subcommand(1);

    VocabCmd vocab_cmd;
    TrainCmd train_cmd;
    RelearnCmd relearn_cmd;
    LrFindCmd lr_find_cmd;
    TransformCmd transform_cmd;
    EvalPplCmd eval_ppl_cmd;
    EvalIntCmd eval_int_cmd;
    AlignCmd align_cmd;
    GenerateCmd generate_cmd;
    SynthLangCmd synth_lang_cmd;
    PipelineCmd pipeline_cmd;
    VerifyCmd verify_cmd;

    vocab_cmd.attach(app);
    train_cmd.attach(app);
    relearn_cmd.attach(app);
    lr_find_cmd.attach(app);
    transform_cmd.attach(app);
    eval_ppl_cmd.attach(app);
    eval_int_cmd.attach(app);
    align_cmd.attach(app);
    generate_cmd.attach(app);
    synth_lang_cmd.attach(app);
    pipeline_cmd.attach(app);
    verify_cmd.attach(app);

    try {
        app.parse(argc, argv);
        return 0;
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? 0 : 1;
    } catch (const relex::UsageError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const relex::NumericError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
}
