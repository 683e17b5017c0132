#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <regex>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "lexforge/jsonl.hpp"
#include "lexforge/rng.hpp"

namespace lexforge {

struct RawDocument {
    std::string id;
    std::string text;
    std::optional<std::string> court;
    std::optional<int> year;
};

// Ordered regex rewrite rules. Digitized court documents carry artifacts --
// separator lines, stray page numbers, control bytes, ragged whitespace --
// and one pass over this list removes them. The default set is idempotent.
class CleaningRuleSet {
public:
    struct Rule {
        std::string pattern;
        std::string replacement;
    };

    CleaningRuleSet() = default;

    explicit CleaningRuleSet(std::vector<Rule> rules) : rules_(std::move(rules)) {
        compile();
    }

    static CleaningRuleSet defaults() {
        return CleaningRuleSet({
            // control characters from digitization (keeps \t and \n)
            {"[\\x00-\\x08\\x0B-\\x1F\\x7F]", ""},
            // runs of >=4 dashes/underscores/equals, anywhere
            {"[-_=]{4,}", " "},
            // lines that are only a page number, optionally prefixed "Page"
            {"^[ \\t]*(?:[Pp][Aa][Gg][Ee][ \\t.:]*)?[0-9]+[ \\t]*$", ""},
            // horizontal whitespace runs
            {"[ \\t]+", " "},
            // spaces hugging line boundaries
            {"^ | $", ""},
            // >=2 consecutive blank lines become one paragraph break
            {"\\n{3,}", "\n\n"},
        });
    }

    static CleaningRuleSet load(const std::string& path) {
        json arr = read_json_file(path);
        check(arr.is_array(), path + ": rule file must be a JSON array");
        std::vector<Rule> rules;
        for (const auto& item : arr) {
            check(item.is_object() && item.contains("pattern") && item.contains("replacement"),
                  path + ": each rule needs \"pattern\" and \"replacement\"");
            rules.push_back({item["pattern"].get<std::string>(),
                             item["replacement"].get<std::string>()});
        }
        return CleaningRuleSet(std::move(rules));
    }

    const std::vector<Rule>& rules() const { return rules_; }

    std::string apply(const std::string& text) const {
        std::string out = text;
        for (std::size_t i = 0; i < rules_.size(); ++i) {
            out = std::regex_replace(out, compiled_[i], rules_[i].replacement);
        }
        // trim document ends; not expressible as a multiline rule
        const auto first = out.find_first_not_of(" \t\n");
        if (first == std::string::npos) return "";
        const auto last = out.find_last_not_of(" \t\n");
        return out.substr(first, last - first + 1);
    }

private:
    void compile() {
        compiled_.clear();
        for (const auto& rule : rules_) {
            try {
                compiled_.emplace_back(rule.pattern,
                                       std::regex::ECMAScript | std::regex::multiline);
            } catch (const std::regex_error& e) {
                fail("invalid cleaning pattern \"" + rule.pattern + "\": " + e.what());
            }
        }
    }

    std::vector<Rule> rules_;
    std::vector<std::regex> compiled_;
};

inline std::string clean_text(const RawDocument& doc, const CleaningRuleSet& rules) {
    return rules.apply(doc.text);
}

// Reads a JSON Lines corpus: one {"id", "text", "court", "year"} object per
// line. Order is preserved; duplicate ids and malformed records are fatal.
inline std::vector<RawDocument> ingest(const std::string& path) {
    std::vector<RawDocument> docs;
    std::unordered_map<std::string, int> first_line_of_id;
    for_each_jsonl_record(path, [&](int line_no, const json& record) {
        if (!record.contains("id") || !record["id"].is_string()) {
            fail(path + ": record missing string \"id\" at line " + std::to_string(line_no));
        }
        if (!record.contains("text") || !record["text"].is_string()) {
            fail(path + ": record missing string \"text\" at line " + std::to_string(line_no));
        }
        RawDocument doc;
        doc.id = record["id"].get<std::string>();
        doc.text = record["text"].get<std::string>();
        if (doc.id.empty()) fail(path + ": empty id at line " + std::to_string(line_no));
        if (doc.text.empty()) fail(path + ": empty text at line " + std::to_string(line_no));
        if (record.contains("court") && record["court"].is_string()) {
            doc.court = record["court"].get<std::string>();
        }
        if (record.contains("year") && record["year"].is_number_integer()) {
            doc.year = record["year"].get<int>();
        }
        auto [it, inserted] = first_line_of_id.emplace(doc.id, line_no);
        if (!inserted) {
            fail(path + ": duplicate id \"" + doc.id + "\" at lines " +
                 std::to_string(it->second) + " and " + std::to_string(line_no));
        }
        docs.push_back(std::move(doc));
    });
    return docs;
}

inline void write_corpus(const std::string& path, const std::vector<RawDocument>& docs) {
    std::ofstream out(path);
    check(out.good(), "cannot write file: " + path);
    for (const auto& doc : docs) {
        json record{{"id", doc.id}, {"text", doc.text}};
        record["court"] = doc.court ? json(*doc.court) : json(nullptr);
        record["year"] = doc.year ? json(*doc.year) : json(nullptr);
        out << record.dump() << "\n";
    }
}

// Crude sentence count used only for length stratification.
inline int sentence_count(const std::string& text) {
    int count = 0;
    bool in_sentence = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char c = text[i];
        if (c == '.' || c == '!' || c == '?' || c == '\n') {
            if (in_sentence) ++count;
            in_sentence = false;
        } else if (c != ' ' && c != '\t') {
            in_sentence = true;
        }
    }
    if (in_sentence) ++count;
    return count;
}

struct CorpusSplit {
    std::vector<std::string> train;
    std::vector<std::string> test;
    std::vector<int> length_buckets;  // upper bucket edges, in sentences

    json to_json() const {
        return json{{"train", train}, {"test", test}, {"length_buckets", length_buckets}};
    }

    static CorpusSplit from_json(const json& j) {
        CorpusSplit split;
        split.train = j.at("train").get<std::vector<std::string>>();
        split.test = j.at("test").get<std::vector<std::string>>();
        split.length_buckets = j.at("length_buckets").get<std::vector<int>>();
        return split;
    }
};

// 9:1 train/test split, stratified over sentence-count quintiles so both
// splits see the same document-length distribution.
inline CorpusSplit split_corpus(const std::vector<RawDocument>& docs, std::uint64_t seed) {
    check(docs.size() >= 2, "split_corpus: need at least 2 documents");

    std::vector<int> counts(docs.size());
    for (std::size_t i = 0; i < docs.size(); ++i) counts[i] = sentence_count(docs[i].text);

    std::vector<int> sorted = counts;
    std::sort(sorted.begin(), sorted.end());
    std::set<int> edges;
    for (int k = 1; k <= 4; ++k) {
        const std::size_t rank =
            std::min(sorted.size() - 1, static_cast<std::size_t>(k) * sorted.size() / 5);
        edges.insert(sorted[rank]);
    }

    CorpusSplit split;
    split.length_buckets.assign(edges.begin(), edges.end());

    auto bucket_of = [&](int count) {
        std::size_t b = 0;
        for (int edge : split.length_buckets) {
            if (count <= edge) break;
            ++b;
        }
        return b;
    };

    std::map<std::size_t, std::vector<std::size_t>> buckets;
    for (std::size_t i = 0; i < docs.size(); ++i) buckets[bucket_of(counts[i])].push_back(i);

    for (auto& [bucket, members] : buckets) {
        RngStream rng = RngStream::derive(seed, "corpus_split", {bucket});
        rng.shuffle(members);
        const std::size_t n_test =
            static_cast<std::size_t>(static_cast<double>(members.size()) / 10.0 + 0.5);
        for (std::size_t i = 0; i < members.size(); ++i) {
            auto& side = i < n_test ? split.test : split.train;
            side.push_back(docs[members[i]].id);
        }
    }
    std::sort(split.train.begin(), split.train.end());
    std::sort(split.test.begin(), split.test.end());
    return split;
}

}  // namespace lexforge
