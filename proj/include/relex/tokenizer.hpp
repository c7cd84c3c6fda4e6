#pragma once

// Byte-level BPE: training, encoding, decoding, and the vocabulary file
// format. The 256 single-byte tokens are always ids 0..255, so any byte
// string round-trips. Merges never cross whitespace; pre-tokens are
// maximal non-whitespace runs, whitespace bytes stay single tokens.

#include <algorithm>
#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <unordered_map>
#include <vector>

#include "relex/common.hpp"

namespace relex {

struct Vocabulary {
    std::vector<std::string> token_table;          // id -> byte sequence
    std::vector<std::pair<int, int>> merges;       // ordered (left id, right id)

    int size() const { return static_cast<int>(token_table.size()); }

    // End-of-document token sits one past the BPE table by convention.
    int eod_id() const { return size(); }
    int id_space() const { return size() + 1; }
};

namespace detail {

inline bool is_space_byte(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\v' || c == '\f';
}

// Splits text into pre-tokens: maximal non-whitespace runs, and each
// whitespace byte on its own (never merged).
inline std::vector<std::string> pretokenize(const std::string& text) {
    std::vector<std::string> out;
    std::size_t i = 0;
    while (i < text.size()) {
        if (is_space_byte(static_cast<unsigned char>(text[i]))) {
            out.emplace_back(1, text[i]);
            ++i;
        } else {
            std::size_t j = i;
            while (j < text.size() && !is_space_byte(static_cast<unsigned char>(text[j]))) ++j;
            out.emplace_back(text.substr(i, j - i));
            i = j;
        }
    }
    return out;
}

inline std::uint64_t pair_key(int a, int b) {
    return (static_cast<std::uint64_t>(static_cast<std::uint32_t>(a)) << 32) | static_cast<std::uint32_t>(b);
}

// Replaces all adjacent (left,right) occurrences in-place, left to right.
inline void apply_merge(std::vector<int>& ids, int left, int right, int merged) {
    std::size_t w = 0;
    for (std::size_t r = 0; r < ids.size();) {
        if (r + 1 < ids.size() && ids[r] == left && ids[r + 1] == right) {
            ids[w++] = merged;
            r += 2;
        } else {
            ids[w++] = ids[r++];
        }
    }
    ids.resize(w);
}

}  // namespace detail

inline Vocabulary base_byte_vocabulary() {
    Vocabulary v;
    v.token_table.reserve(256);
    for (int i = 0; i < 256; ++i) v.token_table.emplace_back(1, static_cast<char>(i));
    return v;
}

// Trains a vocabulary of min(target_size, 256 + achievable merges) tokens.
// Pair frequencies are corpus-global over whitespace-delimited pre-tokens.
// Ties break on the lexicographically smaller concatenated byte sequence,
// then on the smaller left byte sequence, so builds are deterministic.
inline Vocabulary train_bpe(const std::vector<std::string>& corpus, int target_size) {
    if (corpus.empty()) throw Error("train_bpe: empty corpus");
    if (target_size < 256) throw Error("train_bpe: target_size must be at least 256");

    Vocabulary vocab = base_byte_vocabulary();

    // unique pre-token -> count; merges operate on these only
    std::map<std::string, long long> word_counts;
    for (const std::string& doc : corpus) {
        for (std::string& w : detail::pretokenize(doc)) {
            if (w.size() == 1 && detail::is_space_byte(static_cast<unsigned char>(w[0]))) continue;
            word_counts[std::move(w)] += 1;
        }
    }

    std::vector<std::vector<int>> words;
    std::vector<long long> counts;
    words.reserve(word_counts.size());
    for (const auto& [text, count] : word_counts) {
        std::vector<int> ids(text.size());
        for (std::size_t i = 0; i < text.size(); ++i) ids[i] = static_cast<unsigned char>(text[i]);
        words.push_back(std::move(ids));
        counts.push_back(count);
    }

    while (vocab.size() < target_size) {
        std::unordered_map<std::uint64_t, long long> pair_counts;
        for (std::size_t w = 0; w < words.size(); ++w) {
            const auto& ids = words[w];
            for (std::size_t i = 0; i + 1 < ids.size(); ++i)
                pair_counts[detail::pair_key(ids[i], ids[i + 1])] += counts[w];
        }
        if (pair_counts.empty()) break;

        bool have_best = false;
        int best_left = 0, best_right = 0;
        long long best_count = 0;
        std::string best_concat, best_left_bytes;
        for (const auto& [key, count] : pair_counts) {
            int left = static_cast<int>(key >> 32);
            int right = static_cast<int>(key & 0xffffffffu);
            std::string concat = vocab.token_table[left] + vocab.token_table[right];
            const std::string& left_bytes = vocab.token_table[left];
            bool better = !have_best || count > best_count ||
                          (count == best_count && (concat < best_concat ||
                           (concat == best_concat && left_bytes < best_left_bytes)));
            if (better) {
                have_best = true;
                best_left = left;
                best_right = right;
                best_count = count;
                best_concat = std::move(concat);
                best_left_bytes = left_bytes;
            }
        }

        int merged = vocab.size();
        vocab.token_table.push_back(best_concat);
        vocab.merges.emplace_back(best_left, best_right);
        for (auto& ids : words) detail::apply_merge(ids, best_left, best_right, merged);
    }
    return vocab;
}

// Greedy application of merges in training order (realised as repeated
// lowest-rank merge, which yields the same result).
inline std::vector<int> encode(const Vocabulary& vocab, const std::string& text) {
    std::unordered_map<std::uint64_t, int> rank;
    rank.reserve(vocab.merges.size() * 2);
    for (std::size_t i = 0; i < vocab.merges.size(); ++i)
        rank[detail::pair_key(vocab.merges[i].first, vocab.merges[i].second)] = static_cast<int>(i);

    std::vector<int> out;
    out.reserve(text.size() / 2 + 1);
    for (const std::string& word : detail::pretokenize(text)) {
        std::vector<int> ids(word.size());
        for (std::size_t i = 0; i < word.size(); ++i) ids[i] = static_cast<unsigned char>(word[i]);
        for (;;) {
            int best_rank = -1;
            for (std::size_t i = 0; i + 1 < ids.size(); ++i) {
                auto it = rank.find(detail::pair_key(ids[i], ids[i + 1]));
                if (it != rank.end() && (best_rank < 0 || it->second < best_rank)) best_rank = it->second;
            }
            if (best_rank < 0) break;
            const auto& [left, right] = vocab.merges[best_rank];
            detail::apply_merge(ids, left, right, 256 + best_rank);
        }
        out.insert(out.end(), ids.begin(), ids.end());
    }
    return out;
}

inline std::string decode(const Vocabulary& vocab, const std::vector<int>& ids) {
    std::string out;
    for (int id : ids) {
        if (id < 0 || id >= vocab.size()) throw Error("decode: token id " + std::to_string(id) + " out of range");
        out += vocab.token_table[id];
    }
    return out;
}

// --------------------------------------------------------------------------
// Vocabulary file: `bpe-vocab v1 <size>`, one `id TAB hex` line per token,
// `#merges`, one `left TAB right` line per merge. Bit-exact round trip.

inline void save_vocabulary(const Vocabulary& vocab, const std::string& path) {
    std::ostringstream out;
    out << "bpe-vocab v1 " << vocab.size() << "\n";
    static const char* hexdigits = "0123456789abcdef";
    for (int id = 0; id < vocab.size(); ++id) {
        out << id << '\t';
        for (unsigned char c : vocab.token_table[id]) {
            out << hexdigits[c >> 4] << hexdigits[c & 0xf];
        }
        out << '\n';
    }
    out << "#merges\n";
    for (const auto& [l, r] : vocab.merges) out << l << '\t' << r << '\n';
    write_text_file(path, out.str());
}

inline Vocabulary load_vocabulary(const std::string& path) {
    std::istringstream in(read_text_file(path));
    std::string line;
    if (!std::getline(in, line)) throw FormatError("vocabulary file is empty: " + path);
    std::istringstream header(line);
    std::string magic, version;
    int size = 0;
    header >> magic >> version >> size;
    if (magic != "bpe-vocab") throw FormatError("not a vocabulary file: " + path);
    if (version != "v1") throw VersionError("unsupported vocabulary version '" + version + "' in " + path);
    if (size < 256) throw FormatError("vocabulary size below byte coverage in " + path);

    Vocabulary vocab;
    vocab.token_table.resize(size);
    for (int i = 0; i < size; ++i) {
        if (!std::getline(in, line)) throw FormatError("vocabulary file truncated: " + path);
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos) throw FormatError("malformed token line in " + path);
        int id = std::stoi(line.substr(0, tab));
        if (id != i) throw FormatError("non-dense token ids in " + path);
        std::string hex = line.substr(tab + 1);
        if (hex.size() % 2 != 0) throw FormatError("odd-length hex token in " + path);
        std::string bytes;
        bytes.reserve(hex.size() / 2);
        auto nibble = [&](char c) -> int {
            if (c >= '0' && c <= '9') return c - '0';
            if (c >= 'a' && c <= 'f') return c - 'a' + 10;
            throw FormatError("bad hex digit in " + path);
        };
        for (std::size_t j = 0; j < hex.size(); j += 2)
            bytes.push_back(static_cast<char>((nibble(hex[j]) << 4) | nibble(hex[j + 1])));
        vocab.token_table[i] = std::move(bytes);
    }
    if (!std::getline(in, line) || line != "#merges") throw FormatError("missing #merges section in " + path);
    int next_id = 256;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        std::size_t tab = line.find('\t');
        if (tab == std::string::npos) throw FormatError("malformed merge line in " + path);
        int l = std::stoi(line.substr(0, tab));
        int r = std::stoi(line.substr(tab + 1));
        if (l < 0 || r < 0 || l >= next_id || r >= next_id)
            throw FormatError("merge references undefined token in " + path);
        vocab.merges.emplace_back(l, r);
        ++next_id;
    }
    if (256 + static_cast<int>(vocab.merges.size()) != size)
        throw FormatError("merge count disagrees with vocabulary size in " + path);
    for (int i = 0; i < 256; ++i)
        if (vocab.token_table[i] != std::string(1, static_cast<char>(i)))
            throw FormatError("byte coverage violated in " + path);
    for (std::size_t i = 0; i < vocab.merges.size(); ++i) {
        const auto& [l, r] = vocab.merges[i];
        if (vocab.token_table[256 + i] != vocab.token_table[l] + vocab.token_table[r])
            throw FormatError("merge table inconsistent with token table in " + path);
    }
    return vocab;
}

}  // namespace relex
