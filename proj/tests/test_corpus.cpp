#include <catch2/catch_amalgamated.hpp>

#include <algorithm>
#include <set>

#include "helpers.hpp"
#include "lexforge/corpus.hpp"

using namespace lexforge;

TEST_CASE("ingest reads well-formed records in file order", "[corpus]") {
    TempDir dir;
    write_file(dir.file("c.jsonl"),
               R"({"id": "a", "text": "First judgment.", "court": "SC", "year": 1994})"
               "\n"
               R"({"id": "b", "text": "Second judgment.", "court": null, "year": null})"
               "\n"
               R"({"id": "c", "text": "Third judgment."})"
               "\n");
    auto docs = ingest(dir.file("c.jsonl"));
    REQUIRE(docs.size() == 3);
    REQUIRE(docs[0].id == "a");
    REQUIRE(docs[1].id == "b");
    REQUIRE(docs[2].id == "c");
    REQUIRE(docs[0].court.value() == "SC");
    REQUIRE(docs[0].year.value() == 1994);
    REQUIRE_FALSE(docs[1].court.has_value());
    REQUIRE_FALSE(docs[2].year.has_value());
}

TEST_CASE("ingest rejects a record missing text, naming the line", "[corpus]") {
    TempDir dir;
    write_file(dir.file("c.jsonl"),
               R"({"id": "a", "text": "ok"})"
               "\n"
               R"({"id": "b"})"
               "\n");
    REQUIRE_THROWS_WITH(ingest(dir.file("c.jsonl")), Catch::Matchers::ContainsSubstring("line 2"));
}

TEST_CASE("ingest rejects malformed JSON, naming the line", "[corpus]") {
    TempDir dir;
    write_file(dir.file("c.jsonl"), "{\"id\": \"a\", \"text\": \"ok\"}\nnot json\n");
    REQUIRE_THROWS_WITH(ingest(dir.file("c.jsonl")), Catch::Matchers::ContainsSubstring("line 2"));
}

TEST_CASE("ingest rejects duplicate ids, naming both occurrences", "[corpus]") {
    TempDir dir;
    write_file(dir.file("c.jsonl"),
               R"({"id": "a", "text": "x"})"
               "\n"
               R"({"id": "b", "text": "y"})"
               "\n"
               R"({"id": "a", "text": "z"})"
               "\n");
    REQUIRE_THROWS_WITH(ingest(dir.file("c.jsonl")),
                        Catch::Matchers::ContainsSubstring("lines 1 and 3"));
}

TEST_CASE("ingest of an empty file yields an empty corpus", "[corpus]") {
    TempDir dir;
    write_file(dir.file("c.jsonl"), "");
    REQUIRE(ingest(dir.file("c.jsonl")).empty());
}

TEST_CASE("default rules strip page separators", "[corpus]") {
    const auto rules = CleaningRuleSet::defaults();
    RawDocument doc{"d", "----- Page 3 -----\nThe appellant filed", std::nullopt, std::nullopt};
    REQUIRE(clean_text(doc, rules) == "The appellant filed");
}

TEST_CASE("default rules collapse whitespace", "[corpus]") {
    const auto rules = CleaningRuleSet::defaults();
    RawDocument doc{"d", "Held:   that the\t\tappeal", std::nullopt, std::nullopt};
    REQUIRE(clean_text(doc, rules) == "Held: that the appeal");
}

TEST_CASE("cleaning leaves clean text unchanged", "[corpus]") {
    const auto rules = CleaningRuleSet::defaults();
    const std::string text = "The appeal is allowed.\n\nCosts follow the event.";
    RawDocument doc{"d", text, std::nullopt, std::nullopt};
    REQUIRE(clean_text(doc, rules) == text);
}

TEST_CASE("cleaning is idempotent on artifact-laden fixtures", "[corpus]") {
    const auto rules = CleaningRuleSet::defaults();
    const std::vector<std::string> fixtures = {
        "----- Page 3 -----\nThe appellant filed",
        "______\n12\nOrder of the court\x07 below====== was set aside",
        "  leading space\nPage 42\n\n\n\nnext   paragraph\t\tends  ",
        "no artifacts at all",
        "1994\nden---ied\n----\n- - - -\nallowed",
        "Page\n  17  \nmidline ----- dashes",
    };
    for (const auto& text : fixtures) {
        RawDocument doc{"d", text, std::nullopt, std::nullopt};
        const std::string once = clean_text(doc, rules);
        RawDocument again{"d", once, std::nullopt, std::nullopt};
        REQUIRE(clean_text(again, rules) == once);
    }
}

TEST_CASE("cleaned text has no long dash runs or page-number lines", "[corpus]") {
    const auto rules = CleaningRuleSet::defaults();
    RawDocument doc{"d", "a ---- b\n-----\n3\nPage 9\nrest", std::nullopt, std::nullopt};
    const std::string out = clean_text(doc, rules);
    REQUIRE(out.find("----") == std::string::npos);
    REQUIRE(out.find("Page") == std::string::npos);
    REQUIRE(out.find("rest") != std::string::npos);
}

static std::vector<RawDocument> docs_with_sentences(const std::vector<int>& sentence_counts) {
    std::vector<RawDocument> docs;
    for (std::size_t i = 0; i < sentence_counts.size(); ++i) {
        std::string text;
        for (int s = 0; s < sentence_counts[i]; ++s) text += "Sentence number " + std::to_string(s) + ". ";
        docs.push_back({"doc" + std::to_string(i), text, std::nullopt, std::nullopt});
    }
    return docs;
}

TEST_CASE("ten equal-length documents split 9:1", "[corpus]") {
    auto docs = docs_with_sentences(std::vector<int>(10, 4));
    auto split = split_corpus(docs, 123);
    REQUIRE(split.train.size() == 9);
    REQUIRE(split.test.size() == 1);
}

TEST_CASE("two length buckets each contribute 9:1", "[corpus]") {
    std::vector<int> counts;
    for (int i = 0; i < 10; ++i) counts.push_back(3);
    for (int i = 0; i < 10; ++i) counts.push_back(40);
    auto docs = docs_with_sentences(counts);
    auto split = split_corpus(docs, 77);
    REQUIRE(split.train.size() == 18);
    REQUIRE(split.test.size() == 2);
    // exactly one test document from each length bucket
    int short_test = 0, long_test = 0;
    for (const auto& id : split.test) {
        const int idx = std::stoi(id.substr(3));
        (idx < 10 ? short_test : long_test) += 1;
    }
    REQUIRE(short_test == 1);
    REQUIRE(long_test == 1);
}

TEST_CASE("split is deterministic for a fixed seed", "[corpus]") {
    auto docs = docs_with_sentences({1, 5, 9, 2, 8, 14, 3, 3, 21, 6, 7, 11, 2, 9, 30});
    auto a = split_corpus(docs, 9001);
    auto b = split_corpus(docs, 9001);
    REQUIRE(a.train == b.train);
    REQUIRE(a.test == b.test);
    auto c = split_corpus(docs, 9002);
    REQUIRE((a.train != c.train || a.test != c.test));
}

TEST_CASE("every id lands in exactly one side of the split", "[corpus]") {
    auto docs = docs_with_sentences({4, 4, 9, 1, 6, 6, 6, 12, 2, 2, 18, 5});
    auto split = split_corpus(docs, 5);
    std::set<std::string> seen;
    for (const auto& id : split.train) REQUIRE(seen.insert(id).second);
    for (const auto& id : split.test) REQUIRE(seen.insert(id).second);
    REQUIRE(seen.size() == docs.size());
}

TEST_CASE("split requires at least two documents", "[corpus]") {
    auto docs = docs_with_sentences({3});
    REQUIRE_THROWS_AS(split_corpus(docs, 1), Error);
}

TEST_CASE("rule files load and validate", "[corpus]") {
    TempDir dir;
    write_file(dir.file("rules.json"), R"([{"pattern": "x+", "replacement": "y"}])");
    auto rules = CleaningRuleSet::load(dir.file("rules.json"));
    RawDocument doc{"d", "axxxb", std::nullopt, std::nullopt};
    REQUIRE(clean_text(doc, rules) == "ayb");

    write_file(dir.file("bad.json"), R"([{"pattern": "(", "replacement": ""}])");
    REQUIRE_THROWS_AS(CleaningRuleSet::load(dir.file("bad.json")), Error);
}
