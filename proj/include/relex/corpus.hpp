#pragma once

// Plain-text ingestion with exact-sentence deduplication, seeded dev
// splits, synthetic-language construction over token ids, and the
// tokenized-corpus file format.

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "relex/common.hpp"
#include "relex/tokenizer.hpp"

namespace relex {

struct Document {
    std::string text;
    std::string source;
};

struct Corpus {
    std::vector<Document> documents;
};

namespace detail {

struct Segment {
    std::string sentence;   // up to and including terminal punctuation
    std::string separator;  // following whitespace run
};

// Sentences end at a newline or at '.', '!', '?' followed by whitespace
// (or end of document). The separator keeps the original whitespace so
// documents without duplicates reassemble byte-identically.
inline std::vector<Segment> split_sentences(const std::string& doc) {
    std::vector<Segment> segments;
    std::size_t start = 0, i = 0;
    const std::size_t n = doc.size();
    auto flush = [&](std::size_t sentence_end, std::size_t sep_start) {
        Segment seg;
        seg.sentence = doc.substr(start, sentence_end - start);
        std::size_t j = sep_start;
        while (j < n && is_space_byte(static_cast<unsigned char>(doc[j]))) ++j;
        seg.separator = doc.substr(sep_start, j - sep_start);
        segments.push_back(std::move(seg));
        start = j;
        i = j;
    };
    while (i < n) {
        char c = doc[i];
        if (c == '\n') {
            flush(i, i);
        } else if ((c == '.' || c == '!' || c == '?') &&
                   (i + 1 == n || is_space_byte(static_cast<unsigned char>(doc[i + 1])))) {
            flush(i + 1, i + 1);
        } else {
            ++i;
        }
    }
    if (start < n) flush(n, n);
    return segments;
}

}  // namespace detail

// Reads each path (in the given order), splits file contents into documents
// on blank lines, and drops every sentence that exactly matches an earlier
// one anywhere in the corpus. Documents left without sentences are removed.
inline Corpus ingest_and_dedup(const std::vector<std::string>& paths) {
    std::vector<std::string> sorted_paths = paths;
    std::sort(sorted_paths.begin(), sorted_paths.end());

    Corpus corpus;
    std::unordered_set<std::string> seen;
    for (const std::string& path : sorted_paths) {
        std::string content;
        try {
            content = read_text_file(path);
        } catch (const Error&) {
            throw Error("ingest: unreadable path: " + path);
        }
        // blank-line separated documents within one file
        std::vector<std::string> raw_docs;
        std::size_t pos = 0;
        while (pos <= content.size()) {
            std::size_t next = content.find("\n\n", pos);
            std::string chunk = (next == std::string::npos) ? content.substr(pos)
                                                            : content.substr(pos, next - pos);
            bool blank = chunk.find_first_not_of(" \t\r\n\v\f") == std::string::npos;
            if (!blank) raw_docs.push_back(chunk);
            if (next == std::string::npos) break;
            pos = next + 2;
        }
        int index = 0;
        for (const std::string& raw : raw_docs) {
            std::string rebuilt;
            bool dropped_any = false;
            for (const auto& seg : detail::split_sentences(raw)) {
                if (!seg.sentence.empty() && !seen.insert(seg.sentence).second) {
                    dropped_any = true;
                    continue;
                }
                rebuilt += seg.sentence;
                rebuilt += seg.separator;
            }
            if (dropped_any) {
                while (!rebuilt.empty() &&
                       detail::is_space_byte(static_cast<unsigned char>(rebuilt.back())))
                    rebuilt.pop_back();
            }
            if (rebuilt.find_first_not_of(" \t\r\n\v\f") == std::string::npos) continue;
            std::string label = raw_docs.size() > 1 ? path + "#" + std::to_string(index) : path;
            corpus.documents.push_back({std::move(rebuilt), label});
            ++index;
        }
    }
    return corpus;
}

// Document-level split: dev receives ceil(fraction * N) documents chosen by
// a seeded shuffle; corpus order is preserved within each side.
inline std::pair<Corpus, Corpus> split_dev(const Corpus& corpus, double fraction, std::uint64_t seed) {
    const std::size_t n = corpus.documents.size();
    if (n < 2) throw Error("split_dev: need at least 2 documents");
    if (!(fraction > 0.0 && fraction < 1.0)) throw Error("split_dev: fraction must be in (0, 1)");
    std::size_t dev_count = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(n)));
    if (dev_count >= n) dev_count = n - 1;

    std::vector<std::size_t> order(n);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    Rng rng(seed);
    rng.shuffle(order);
    std::set<std::size_t> dev_set(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(dev_count));

    Corpus train, dev;
    for (std::size_t i = 0; i < n; ++i) {
        (dev_set.count(i) ? dev : train).documents.push_back(corpus.documents[i]);
    }
    return {std::move(train), std::move(dev)};
}

// Encodes every document and appends the end-of-document token.
inline std::vector<std::vector<int>> tokenize_corpus(const Corpus& corpus, const Vocabulary& vocab) {
    std::vector<std::vector<int>> docs;
    docs.reserve(corpus.documents.size());
    for (const auto& doc : corpus.documents) {
        std::vector<int> ids = encode(vocab, doc.text);
        ids.push_back(vocab.eod_id());
        docs.push_back(std::move(ids));
    }
    return docs;
}

// --------------------------------------------------------------------------
// Synthetic languages: deterministic stand-ins for a related target
// language, with exact ground truth so transfer experiments can be scored.

enum class SyntheticKind { token_permutation, local_word_reversal };

struct SyntheticLanguageSpec {
    SyntheticKind kind = SyntheticKind::token_permutation;
    std::uint64_t seed = 0;
    int window = 0;  // reversal kind only
};

struct SyntheticMapping {
    SyntheticKind kind;
    std::vector<int> permutation;  // permutation kind: id t maps to permutation[t]
    int window = 0;

    // Undoes the transformation (window reversal is its own inverse).
    SyntheticMapping inverted() const {
        SyntheticMapping inv = *this;
        if (kind == SyntheticKind::token_permutation)
            for (std::size_t i = 0; i < permutation.size(); ++i)
                inv.permutation[permutation[i]] = static_cast<int>(i);
        return inv;
    }
};

inline SyntheticMapping make_token_permutation(int id_space, std::uint64_t seed) {
    SyntheticMapping map;
    map.kind = SyntheticKind::token_permutation;
    map.permutation.resize(id_space);
    for (int i = 0; i < id_space; ++i) map.permutation[i] = i;
    Rng rng(seed);
    rng.shuffle(map.permutation);
    return map;
}

// Applies an existing mapping, so train and dev splits can share one.
inline std::vector<std::vector<int>> apply_synthetic_mapping(const std::vector<std::vector<int>>& docs,
                                                             int id_space, const SyntheticMapping& map) {
    std::vector<std::vector<int>> out = docs;
    if (map.kind == SyntheticKind::token_permutation) {
        if (static_cast<int>(map.permutation.size()) != id_space)
            throw Error("synthetic language: mapping size does not match id space");
        for (auto& doc : out) {
            for (int& t : doc) {
                if (t < 0 || t >= id_space) throw Error("synthetic language: token id out of range");
                t = map.permutation[t];
            }
        }
    } else {
        if (map.window < 2) throw Error("synthetic language: reversal window must be >= 2");
        for (auto& doc : out) {
            for (std::size_t begin = 0; begin < doc.size(); begin += map.window) {
                std::size_t end = std::min(doc.size(), begin + map.window);
                std::reverse(doc.begin() + static_cast<std::ptrdiff_t>(begin),
                             doc.begin() + static_cast<std::ptrdiff_t>(end));
            }
        }
    }
    return out;
}

inline std::pair<std::vector<std::vector<int>>, SyntheticMapping> make_synthetic_language(
    const std::vector<std::vector<int>>& docs, int id_space, const SyntheticLanguageSpec& spec) {
    SyntheticMapping map;
    map.kind = spec.kind;
    map.window = spec.window;
    if (spec.kind == SyntheticKind::token_permutation) map = make_token_permutation(id_space, spec.seed);
    return {apply_synthetic_mapping(docs, id_space, map), std::move(map)};
}

inline void save_synthetic_mapping(const SyntheticMapping& map, const std::string& path) {
    std::ostringstream out;
    if (map.kind == SyntheticKind::token_permutation) {
        out << "synthmap v1 token_permutation " << map.permutation.size() << "\n";
        for (std::size_t t = 0; t < map.permutation.size(); ++t)
            out << t << '\t' << map.permutation[t] << '\n';
    } else {
        out << "synthmap v1 local_word_reversal " << map.window << "\n";
    }
    write_text_file(path, out.str());
}

inline SyntheticMapping load_synthetic_mapping(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::string magic, version, kind;
    in >> magic >> version >> kind;
    if (magic != "synthmap") throw FormatError("not a synthetic mapping file: " + path);
    if (version != "v1") throw VersionError("unsupported synthmap version in " + path);
    SyntheticMapping map;
    if (kind == "token_permutation") {
        map.kind = SyntheticKind::token_permutation;
        std::size_t n = 0;
        in >> n;
        map.permutation.assign(n, 0);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t t;
            int p;
            if (!(in >> t >> p)) throw FormatError("truncated synthmap: " + path);
            map.permutation[t] = p;
        }
    } else if (kind == "local_word_reversal") {
        map.kind = SyntheticKind::local_word_reversal;
        in >> map.window;
    } else {
        throw FormatError("unknown synthetic kind in " + path);
    }
    return map;
}

// --------------------------------------------------------------------------
// Tokenized corpus file: text header `tokcorpus v1 <vocab-size>`, then each
// document as a 32-bit LE length prefix followed by 32-bit LE token ids.

inline void save_tokenized(const std::vector<std::vector<int>>& docs, int id_space, const std::string& path) {
    for (const auto& doc : docs)
        for (int id : doc)
            if (id < 0 || id >= id_space) throw Error("save_tokenized: token id out of range");
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot write file: " + path);
    out << "tokcorpus v1 " << id_space << "\n";
    for (const auto& doc : docs) {
        write_u32(out, static_cast<std::uint32_t>(doc.size()));
        for (int id : doc) write_u32(out, static_cast<std::uint32_t>(id));
    }
}

struct TokenizedCorpus {
    int id_space = 0;
    std::vector<std::vector<int>> docs;
};

inline TokenizedCorpus load_tokenized(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot read file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw FormatError("empty tokenized corpus: " + path);
    std::istringstream header(line);
    std::string magic, version;
    TokenizedCorpus tc;
    header >> magic >> version >> tc.id_space;
    if (magic != "tokcorpus") throw FormatError("not a tokenized corpus: " + path);
    if (version != "v1") throw VersionError("unsupported tokcorpus version in " + path);
    if (tc.id_space <= 0) throw FormatError("bad vocab size in " + path);
    std::uint32_t len = 0;
    while (read_u32(in, len)) {
        std::vector<int> doc(len);
        for (std::uint32_t i = 0; i < len; ++i) {
            std::uint32_t id;
            if (!read_u32(in, id)) throw FormatError("truncated tokenized corpus: " + path);
            if (id >= static_cast<std::uint32_t>(tc.id_space))
                throw FormatError("token id beyond declared vocab in " + path);
            doc[i] = static_cast<int>(id);
        }
        tc.docs.push_back(std::move(doc));
    }
    return tc;
}

}  // namespace relex
