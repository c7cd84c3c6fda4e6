#include <catch2/catch_amalgamated.hpp>

#include <map>

#include "relex/corpus.hpp"
#include "testutil.hpp"

using namespace relex;

TEST_CASE("sentence splitting keeps terminators and separators") {
    const auto segs = detail::split_sentences("One two. Three four!  Five?");
    REQUIRE(segs.size() == 3);
    CHECK(segs[0].sentence == "One two.");
    CHECK(segs[0].separator == " ");
    CHECK(segs[1].sentence == "Three four!");
    CHECK(segs[1].separator == "  ");
    CHECK(segs[2].sentence == "Five?");
    CHECK(segs[2].separator == "");
}

TEST_CASE("periods inside words do not split sentences") {
    const auto segs = detail::split_sentences("Version 1.5 shipped. Done.");
    REQUIRE(segs.size() == 2);
    CHECK(segs[0].sentence == "Version 1.5 shipped.");
}

TEST_CASE("ingest splits documents on blank lines") {
    const std::string dir = testutil::fresh_dir("relex_corpus_ingest");
    write_text_file(dir + "/a.txt", "Doc one here.\n\nDoc two here.\n");
    const Corpus c = ingest_and_dedup({dir + "/a.txt"});
    REQUIRE(c.documents.size() == 2);
    CHECK(c.documents[0].text == "Doc one here.");
    CHECK(c.documents[1].text == "Doc two here.\n");  // trailing separator kept
    CHECK(c.documents[0].source == dir + "/a.txt#0");
}

TEST_CASE("ingest drops duplicate sentences across files") {
    const std::string dir = testutil::fresh_dir("relex_corpus_dedup");
    write_text_file(dir + "/a.txt", "Shared sentence here. Unique one here.");
    write_text_file(dir + "/b.txt", "Shared sentence here. Another unique here.");
    const Corpus c = ingest_and_dedup({dir + "/a.txt", dir + "/b.txt"});
    REQUIRE(c.documents.size() == 2);
    // paths are processed in sorted order, so a.txt keeps the shared sentence
    CHECK(c.documents[0].text.find("Shared sentence") != std::string::npos);
    CHECK(c.documents[1].text.find("Shared sentence") == std::string::npos);
    CHECK(c.documents[1].text.find("Another unique") != std::string::npos);
}

TEST_CASE("ingest is idempotent over its own output") {
    const std::string dir = testutil::fresh_dir("relex_corpus_idem");
    write_text_file(dir + "/a.txt", testutil::make_corpus_text(3, 4000));
    const Corpus once = ingest_and_dedup({dir + "/a.txt"});
    std::string rebuilt;
    for (const auto& d : once.documents) rebuilt += d.text + "\n\n";
    write_text_file(dir + "/b.txt", rebuilt);
    const Corpus twice = ingest_and_dedup({dir + "/b.txt"});
    REQUIRE(twice.documents.size() == once.documents.size());
    for (std::size_t i = 0; i < once.documents.size(); ++i)
        CHECK(twice.documents[i].text == once.documents[i].text);
}

TEST_CASE("ingest reports unreadable paths") {
    CHECK_THROWS_AS(ingest_and_dedup({"/nonexistent/nope.txt"}), Error);
}

TEST_CASE("dev split takes ceil(fraction * n) documents and is seeded") {
    Corpus c;
    for (int i = 0; i < 10; ++i) c.documents.push_back({"Doc " + std::to_string(i) + ".", "mem"});
    auto [train1, dev1] = split_dev(c, 0.25, 7);
    auto [train2, dev2] = split_dev(c, 0.25, 7);
    auto [train3, dev3] = split_dev(c, 0.25, 8);
    CHECK(dev1.documents.size() == 3);  // ceil(2.5)
    CHECK(train1.documents.size() == 7);
    REQUIRE(dev1.documents.size() == dev2.documents.size());
    for (std::size_t i = 0; i < dev1.documents.size(); ++i)
        CHECK(dev1.documents[i].text == dev2.documents[i].text);
    bool same = dev1.documents.size() == dev3.documents.size();
    if (same)
        for (std::size_t i = 0; i < dev1.documents.size(); ++i)
            same = same && dev1.documents[i].text == dev3.documents[i].text;
    CHECK_FALSE(same);

    CHECK_THROWS_AS(split_dev(c, 0.0, 1), Error);
    CHECK_THROWS_AS(split_dev(c, 1.0, 1), Error);
    Corpus tiny;
    tiny.documents.push_back({"One.", "m"});
    CHECK_THROWS_AS(split_dev(tiny, 0.5, 1), Error);
}

TEST_CASE("tokenize_corpus appends the end-of-document id") {
    const Vocabulary v = train_bpe({"some text"}, 256);
    Corpus c;
    c.documents.push_back({"hi", "m"});
    c.documents.push_back({"", "m"});
    const auto docs = tokenize_corpus(c, v);
    REQUIRE(docs.size() == 2);
    CHECK(docs[0] == std::vector<int>{'h', 'i', v.eod_id()});
    CHECK(docs[1] == std::vector<int>{v.eod_id()});
}

TEST_CASE("token permutation preserves unigram structure") {
    const int id_space = 40;
    const SyntheticMapping map = make_token_permutation(id_space, 11);
    REQUIRE(static_cast<int>(map.permutation.size()) == id_space);

    std::vector<std::vector<int>> docs = {{1, 2, 3, 1, 2, 1}, {5, 5, 7}};
    const auto out = apply_synthetic_mapping(docs, id_space, map);
    std::map<int, int> before, after;
    for (const auto& d : docs)
        for (int t : d) ++before[t];
    for (const auto& d : out)
        for (int t : d) ++after[t];
    REQUIRE(before.size() == after.size());
    for (const auto& [t, n] : before) CHECK(after[map.permutation[t]] == n);
    // structure is preserved: repeated source token stays one target token
    CHECK(out[0][0] == out[0][3]);
}

TEST_CASE("window reversal reverses fixed-length chunks") {
    SyntheticMapping map;
    map.kind = SyntheticKind::local_word_reversal;
    map.window = 3;
    const std::vector<std::vector<int>> docs = {{1, 2, 3, 4, 5, 6, 7, 8}};
    const auto out = apply_synthetic_mapping(docs, 10, map);
    CHECK(out[0] == std::vector<int>{3, 2, 1, 6, 5, 4, 8, 7});
}

TEST_CASE("synthetic mappings invert") {
    const int id_space = 25;
    const SyntheticMapping perm = make_token_permutation(id_space, 3);
    const std::vector<std::vector<int>> docs = {{0, 5, 9, 24, 24, 3}};
    CHECK(apply_synthetic_mapping(apply_synthetic_mapping(docs, id_space, perm), id_space, perm.inverted()) ==
          docs);

    SyntheticMapping rev;
    rev.kind = SyntheticKind::local_word_reversal;
    rev.window = 4;
    CHECK(apply_synthetic_mapping(apply_synthetic_mapping(docs, id_space, rev), id_space, rev.inverted()) ==
          docs);
}

TEST_CASE("synthetic mapping validation") {
    SyntheticMapping short_map = make_token_permutation(5, 1);
    CHECK_THROWS_AS(apply_synthetic_mapping({{1}}, 9, short_map), Error);
    CHECK_THROWS_AS(apply_synthetic_mapping({{9}}, 5, make_token_permutation(5, 1)), Error);
    SyntheticMapping rev;
    rev.kind = SyntheticKind::local_word_reversal;
    rev.window = 1;
    CHECK_THROWS_AS(apply_synthetic_mapping({{1}}, 5, rev), Error);
}

TEST_CASE("make_synthetic_language derives mapping from the spec seed") {
    SyntheticLanguageSpec spec;
    spec.kind = SyntheticKind::token_permutation;
    spec.seed = 21;
    const std::vector<std::vector<int>> docs = {{0, 1, 2, 3}};
    auto [out1, map1] = make_synthetic_language(docs, 8, spec);
    auto [out2, map2] = make_synthetic_language(docs, 8, spec);
    CHECK(out1 == out2);
    CHECK(map1.permutation == map2.permutation);
    CHECK(out1[0] != docs[0]);  // seed 21 on 8 ids does not give identity
}

TEST_CASE("synthetic mapping file round trips") {
    const std::string dir = testutil::fresh_dir("relex_corpus_map");
    const SyntheticMapping perm = make_token_permutation(12, 5);
    save_synthetic_mapping(perm, dir + "/p.txt");
    const SyntheticMapping back = load_synthetic_mapping(dir + "/p.txt");
    CHECK(back.kind == SyntheticKind::token_permutation);
    CHECK(back.permutation == perm.permutation);

    SyntheticMapping rev;
    rev.kind = SyntheticKind::local_word_reversal;
    rev.window = 6;
    save_synthetic_mapping(rev, dir + "/r.txt");
    const SyntheticMapping back2 = load_synthetic_mapping(dir + "/r.txt");
    CHECK(back2.kind == SyntheticKind::local_word_reversal);
    CHECK(back2.window == 6);

    write_text_file(dir + "/bad.txt", "synthmap v2 token_permutation 3\n");
    CHECK_THROWS_AS(load_synthetic_mapping(dir + "/bad.txt"), VersionError);
}

TEST_CASE("tokenized corpus file round trips") {
    const std::string dir = testutil::fresh_dir("relex_corpus_tok");
    const std::vector<std::vector<int>> docs = {{1, 2, 3}, {}, {300, 0, 299}};
    save_tokenized(docs, 301, dir + "/c.tok");
    const TokenizedCorpus back = load_tokenized(dir + "/c.tok");
    CHECK(back.id_space == 301);
    CHECK(back.docs == docs);

    CHECK_THROWS_AS(save_tokenized({{5}}, 5, dir + "/bad.tok"), Error);  // id out of range
    write_text_file(dir + "/trunc.tok", "tokcorpus v1 10\n");
    CHECK_NOTHROW(load_tokenized(dir + "/trunc.tok"));  // zero documents is valid
}
