#pragma once

// Deterministic English-like filler text for tests: templated clauses over
// Zipf-weighted word pools, documents separated by blank lines. Sentences
// carry enough variety (names, years, varied templates) that exact-duplicate
// removal keeps nearly everything.

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "relex/common.hpp"

namespace testutil {

inline const std::vector<std::string>& nouns() {
    static const std::vector<std::string> w = {
        "time",   "year",   "people", "way",     "day",      "man",     "thing",  "woman",  "life",
        "child",  "world",  "school", "state",   "family",   "student", "group",  "country", "problem",
        "hand",   "part",   "place",  "case",    "week",     "company", "system", "program", "question",
        "work",   "night",  "point",  "home",    "water",    "room",    "mother", "area",    "money",
        "story",  "fact",   "month",  "lot",     "study",    "book",    "eye",    "job",     "word",
        "business", "issue", "side",  "kind",    "head",     "house",   "service", "friend", "father",
        "power",  "hour",   "game",   "line",    "end",      "member",  "law",    "car",     "city",
        "name",   "team",   "minute", "idea",    "kid",      "body",    "back",   "parent",  "face",
        "level",  "office", "door",   "health",  "person",   "art",     "war",    "history", "party",
        "result", "change", "morning", "reason", "research", "girl",    "guy",    "moment",  "air",
        "teacher", "force", "education", "river", "garden",  "market",  "bridge", "letter",  "road",
        "season"};
    return w;
}

inline const std::vector<std::string>& verbs() {
    static const std::vector<std::string> w = {
        "makes",    "takes",   "sees",    "gets",    "finds",   "gives",   "tells",    "asks",
        "works",    "seems",   "feels",   "tries",   "leaves",  "calls",   "keeps",    "helps",
        "turns",    "shows",   "hears",   "plays",   "runs",    "moves",   "likes",    "believes",
        "holds",    "brings",  "writes",  "provides", "sits",   "stands",  "loses",    "pays",
        "meets",    "includes", "continues", "sets",  "learns",  "changes", "leads",    "watches",
        "follows",  "stops",   "creates", "speaks",  "reads",   "allows",  "adds",     "spends",
        "grows",    "opens",   "walks",   "wins",    "offers",  "remembers", "loves",  "considers",
        "buys",     "serves",  "sends",   "expects", "builds",  "falls",   "cuts",     "reaches",
        "remains",  "visits",  "crosses", "paints",  "repairs", "studies"};
    return w;
}

inline const std::vector<std::string>& adjectives() {
    static const std::vector<std::string> w = {
        "good",  "new",   "first", "last",  "long",  "great", "little", "own",   "other", "old",
        "right", "big",   "high",  "small", "large", "next",  "early",  "young", "few",   "public",
        "bad",   "same",  "able",  "quiet", "rich",  "busy",  "bright", "calm",  "clear", "cold",
        "dark",  "deep",  "easy",  "fair",  "fast",  "fine",  "free",   "full",  "hard",  "heavy",
        "hot",   "kind",  "late",  "light", "loud",  "low",   "near",   "open",  "plain", "poor",
        "quick", "sharp", "short", "slow",  "soft",  "strong", "sweet", "tall",  "thick", "thin",
        "warm",  "weak",  "wide",  "wild",  "wise"};
    return w;
}

inline const std::vector<std::string>& names() {
    static const std::vector<std::string> w = {"Alder",  "Brook", "Cedar",  "Dunne", "Ellis",  "Farro",
                                               "Grove",  "Hale",  "Iris",   "Jasper", "Kestrel", "Lark",
                                               "Maple",  "North", "Oriel",  "Perry", "Quill",  "Rowan",
                                               "Sable",  "Thorn", "Umber",  "Vale",  "Wren",   "Yarrow"};
    return w;
}

inline const std::vector<std::string>& places() {
    static const std::vector<std::string> w = {"harbor", "valley",  "garden", "market", "station",
                                               "forest", "meadow",  "square", "castle", "village",
                                               "island", "library", "museum", "tower",  "farm"};
    return w;
}

// Low ranks strongly preferred, roughly Zipfian.
inline const std::string& zipf_pick(relex::Rng& rng, const std::vector<std::string>& pool) {
    const double u = rng.uniform();
    const std::size_t idx = static_cast<std::size_t>(u * u * u * static_cast<double>(pool.size()));
    return pool[idx >= pool.size() ? pool.size() - 1 : idx];
}

inline std::string make_sentence(relex::Rng& rng) {
    auto noun = [&] { return zipf_pick(rng, nouns()); };
    auto verb = [&] { return zipf_pick(rng, verbs()); };
    auto adj = [&] { return zipf_pick(rng, adjectives()); };
    auto name = [&] { return names()[rng.uniform_int(static_cast<int>(names().size()))]; };
    auto place = [&] { return places()[rng.uniform_int(static_cast<int>(places().size()))]; };
    auto year = [&] { return std::to_string(1800 + rng.uniform_int(220)); };

    switch (rng.uniform_int(12)) {
        case 0: return "The " + adj() + " " + noun() + " " + verb() + " the " + noun() + ".";
        case 1: return name() + " " + verb() + " a " + adj() + " " + noun() + " near the " + place() + ".";
        case 2: return "Every " + noun() + " " + verb() + " because the " + noun() + " was " + adj() + ".";
        case 3: return "In " + year() + " the " + noun() + " of the " + place() + " was " + adj() + ".";
        case 4:
            return "A " + adj() + " " + noun() + " and a " + adj() + " " + noun() + " " + verb() +
                   " the " + noun() + ".";
        case 5: return name() + " and " + name() + " " + verb() + " the " + adj() + " " + noun() + ".";
        case 6: return "The " + noun() + " near the " + place() + " " + verb() + " a " + adj() + " " + noun() + ".";
        case 7: return "When the " + noun() + " " + verb() + ", the " + adj() + " " + noun() + " " + verb() + ".";
        case 8: return "No " + noun() + " " + verb() + " the " + noun() + " without a " + adj() + " " + noun() + ".";
        case 9: return "The " + noun() + " of " + name() + " " + verb() + " the " + place() + " in " + year() + ".";
        case 10: return "Some " + adj() + " " + noun() + " " + verb() + " more than the " + adj() + " " + noun() + ".";
        default:
            return "After the " + adj() + " " + noun() + ", " + name() + " " + verb() + " the " + noun() +
                   " again.";
    }
}

inline std::string make_document(relex::Rng& rng) {
    const int sentences = 4 + rng.uniform_int(7);
    std::string doc;
    for (int i = 0; i < sentences; ++i) {
        if (i) doc += " ";
        doc += make_sentence(rng);
    }
    return doc;
}

// Blank-line separated documents totalling at least `approx_bytes` of text.
inline std::string make_corpus_text(std::uint64_t seed, std::size_t approx_bytes) {
    relex::Rng rng(seed);
    std::string text;
    text.reserve(approx_bytes + 1024);
    while (text.size() < approx_bytes) {
        text += make_document(rng);
        text += "\n\n";
    }
    return text;
}

inline std::string write_corpus_file(const std::string& path, std::uint64_t seed, std::size_t approx_bytes) {
    relex::write_text_file(path, make_corpus_text(seed, approx_bytes));
    return path;
}

// Scratch directory under the system temp root, cleaned and recreated.
inline std::string fresh_dir(const std::string& name) {
    namespace fs = std::filesystem;
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir.string();
}

}  // namespace testutil
