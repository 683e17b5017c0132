#pragma once

#include <array>
#include <fstream>
#include <string>
#include <vector>

#include "lexforge/corpus.hpp"
#include "lexforge/hier.hpp"
#include "lexforge/jsonl.hpp"
#include "lexforge/rng.hpp"

namespace lexforge {

// ---------------------------------------------------------------------------
// Task example schemas (JSON Lines, one example per line)

struct LsiExample {
    std::string id;
    std::vector<std::string> sentences;
    std::vector<int> labels;  // subset of [0, L)
};

struct SegExample {
    std::string id;
    std::vector<std::string> sentences;
    std::vector<int> roles;  // one of the seven roles per sentence
};

struct CjpeExample {
    std::string id;
    std::string text;  // judgment with the decision removed
    int label = 0;     // 1 = accept, 0 = reject
};

constexpr int kRoleCount = 7;

inline const std::array<const char*, kRoleCount>& role_names() {
    static const std::array<const char*, kRoleCount> names = {
        "Facts",          "Arguments", "Statutes", "Precedents", "Ratio Decidendi",
        "Ruling (Lower)", "Ruling (Present)"};
    return names;
}

inline std::vector<LsiExample> load_lsi(const std::string& path) {
    std::vector<LsiExample> examples;
    for_each_jsonl_record(path, [&](int line_no, const json& record) {
        const std::string at = path + " line " + std::to_string(line_no);
        check(record.contains("id") && record["id"].is_string(), at + ": missing string \"id\"");
        check(record.contains("sentences") && record["sentences"].is_array(),
              at + ": missing array \"sentences\"");
        check(record.contains("labels") && record["labels"].is_array(),
              at + ": missing array \"labels\"");
        LsiExample example;
        example.id = record["id"].get<std::string>();
        for (const auto& s : record["sentences"]) {
            check(s.is_string(), at + ": sentences must be strings");
            example.sentences.push_back(s.get<std::string>());
        }
        for (const auto& l : record["labels"]) {
            check(l.is_number_integer() && l.get<int>() >= 0,
                  at + ": labels must be non-negative integers");
            example.labels.push_back(l.get<int>());
        }
        examples.push_back(std::move(example));
    });
    return examples;
}

inline std::vector<SegExample> load_seg(const std::string& path) {
    std::vector<SegExample> examples;
    for_each_jsonl_record(path, [&](int line_no, const json& record) {
        const std::string at = path + " line " + std::to_string(line_no);
        check(record.contains("id") && record["id"].is_string(), at + ": missing string \"id\"");
        check(record.contains("sentences") && record["sentences"].is_array(),
              at + ": missing array \"sentences\"");
        check(record.contains("roles") && record["roles"].is_array(),
              at + ": missing array \"roles\"");
        SegExample example;
        example.id = record["id"].get<std::string>();
        for (const auto& s : record["sentences"]) {
            check(s.is_string(), at + ": sentences must be strings");
            example.sentences.push_back(s.get<std::string>());
        }
        for (const auto& r : record["roles"]) {
            check(r.is_number_integer() && r.get<int>() >= 0 && r.get<int>() < kRoleCount,
                  at + ": roles must be integers in [0, 7)");
            example.roles.push_back(r.get<int>());
        }
        check(example.roles.size() == example.sentences.size(),
              at + ": roles length " + std::to_string(example.roles.size()) +
                  " does not match sentences length " +
                  std::to_string(example.sentences.size()));
        examples.push_back(std::move(example));
    });
    return examples;
}

inline std::vector<CjpeExample> load_cjpe(const std::string& path) {
    std::vector<CjpeExample> examples;
    for_each_jsonl_record(path, [&](int line_no, const json& record) {
        const std::string at = path + " line " + std::to_string(line_no);
        check(record.contains("id") && record["id"].is_string(), at + ": missing string \"id\"");
        check(record.contains("text") && record["text"].is_string(),
              at + ": missing string \"text\"");
        check(record.contains("label") && record["label"].is_number_integer(),
              at + ": missing integer \"label\"");
        CjpeExample example;
        example.id = record["id"].get<std::string>();
        example.text = record["text"].get<std::string>();
        example.label = record["label"].get<int>();
        check(example.label == 0 || example.label == 1, at + ": label must be 0 or 1");
        examples.push_back(std::move(example));
    });
    return examples;
}

inline void save_lsi(const std::string& path, const std::vector<LsiExample>& examples) {
    std::ofstream out(path);
    check(out.good(), "cannot write file: " + path);
    for (const auto& e : examples) {
        out << json{{"id", e.id}, {"sentences", e.sentences}, {"labels", e.labels}}.dump() << "\n";
    }
}

inline void save_seg(const std::string& path, const std::vector<SegExample>& examples) {
    std::ofstream out(path);
    check(out.good(), "cannot write file: " + path);
    for (const auto& e : examples) {
        out << json{{"id", e.id}, {"sentences", e.sentences}, {"roles", e.roles}}.dump() << "\n";
    }
}

inline void save_cjpe(const std::string& path, const std::vector<CjpeExample>& examples) {
    std::ofstream out(path);
    check(out.good(), "cannot write file: " + path);
    for (const auto& e : examples) {
        out << json{{"id", e.id}, {"text", e.text}, {"label", e.label}}.dump() << "\n";
    }
}

// ---------------------------------------------------------------------------
// Synthetic data
//
// Stand-ins for the real datasets, which are proprietary or too large for a
// desk run. Each label is tied to planted trigger phrases so that a working
// model (or the Bayes classifier reading the triggers) can recover it.

namespace synth_detail {

inline const std::vector<std::string>& background_words() {
    static const std::vector<std::string> words = {
        "the",      "court",     "appeal",   "order",    "case",     "matter",  "record",
        "counsel",  "learned",   "judgment", "evidence", "witness",  "hearing", "petition",
        "respondent", "appellant", "filed",   "against",  "under",    "present", "lower",
        "claim",    "relief",    "costs",    "decree",   "notice",   "period",  "date",
        "party",    "parties",   "high",     "trial",    "bench",    "justice", "honble",
        "therein",  "thereof",   "whereas",  "further",  "stated"};
    return words;
}

inline const std::vector<std::string>& trigger_suffixes() {
    static const std::vector<std::string> suffixes = {
        "alpha", "beta",  "gamma",   "delta", "epsilon", "zeta", "eta",
        "theta", "iota",  "kappa",   "lambda", "mu",     "nu",   "xi",
        "omicron", "pi",  "rho",     "sigma", "tau",     "upsilon"};
    return suffixes;
}

inline std::string lsi_trigger(int label) {
    const auto& suffixes = trigger_suffixes();
    check(label >= 0 && label < static_cast<int>(suffixes.size()),
          "synthetic lsi supports at most " + std::to_string(suffixes.size()) + " labels");
    return "statute" + suffixes[static_cast<std::size_t>(label)];
}

inline const std::array<std::vector<std::string>, kRoleCount>& role_triggers() {
    static const std::array<std::vector<std::string>, kRoleCount> triggers = {{
        {"incident", "complainant", "occurred"},
        {"contended", "submitted", "argued"},
        {"enactment", "provision", "clause"},
        {"cited", "reported", "relied"},
        {"reasoning", "principle", "conclusion"},
        {"sessions", "convicted", "sentenced"},
        {"allowed", "dismissed", "disposed"},
    }};
    return triggers;
}

inline std::string sentence_from(const std::vector<std::string>& extra, int length,
                                 RngStream& rng) {
    const auto& pool = background_words();
    std::vector<std::string> words = extra;
    while (static_cast<int>(words.size()) < length) {
        words.push_back(pool[rng.next_below(pool.size())]);
    }
    rng.shuffle(words);
    std::string sentence;
    for (const auto& w : words) {
        if (!sentence.empty()) sentence += ' ';
        sentence += w;
    }
    return sentence + ".";
}

}  // namespace synth_detail

struct SyntheticConfig {
    int label_count = 8;    // lsi
    double noise = 0.0;     // label corruption rate
    int min_sentences = 6;
    int max_sentences = 12;
};

inline std::vector<LsiExample> generate_lsi(int size, std::uint64_t seed,
                                            const SyntheticConfig& config = {}) {
    check(size >= 1, "generate_lsi: size must be >= 1");
    std::vector<LsiExample> examples;
    for (int i = 0; i < size; ++i) {
        RngStream rng = RngStream::derive(seed, "synth_lsi", {static_cast<std::uint64_t>(i)});
        LsiExample example;
        example.id = "lsi" + std::to_string(i);
        const int n_sentences =
            config.min_sentences +
            static_cast<int>(rng.next_below(
                static_cast<std::uint64_t>(config.max_sentences - config.min_sentences + 1)));
        for (int s = 0; s < n_sentences; ++s) {
            example.sentences.push_back(
                synth_detail::sentence_from({}, 6 + static_cast<int>(rng.next_below(5)), rng));
        }
        // every label guaranteed at least once per dataset via round-robin
        std::vector<int> active;
        active.push_back(i % config.label_count);
        for (int l = 0; l < config.label_count; ++l) {
            if (l != i % config.label_count && rng.next_double() < 0.3) active.push_back(l);
        }
        std::sort(active.begin(), active.end());
        for (int l : active) {
            // plant the trigger phrase in two sentences
            for (int rep = 0; rep < 2; ++rep) {
                auto& sentence = example.sentences[rng.next_below(example.sentences.size())];
                sentence = synth_detail::lsi_trigger(l) + " " + sentence;
            }
            if (rng.next_double() >= config.noise) {
                example.labels.push_back(l);
            }
        }
        examples.push_back(std::move(example));
    }
    return examples;
}

inline std::vector<SegExample> generate_seg(int size, std::uint64_t seed,
                                            const SyntheticConfig& config = {}) {
    check(size >= 1, "generate_seg: size must be >= 1");
    std::vector<SegExample> examples;
    for (int i = 0; i < size; ++i) {
        RngStream rng = RngStream::derive(seed, "synth_seg", {static_cast<std::uint64_t>(i)});
        SegExample example;
        example.id = "seg" + std::to_string(i);
        // roles appear as ordered blocks, the natural rhetorical flow
        for (int role = 0; role < kRoleCount; ++role) {
            if (role != 0 && role != kRoleCount - 1 && rng.next_double() < 0.25) continue;
            const int block = 1 + static_cast<int>(rng.next_below(3));
            for (int s = 0; s < block; ++s) {
                const auto& triggers = synth_detail::role_triggers()[static_cast<std::size_t>(role)];
                const std::string trigger = triggers[rng.next_below(triggers.size())];
                example.sentences.push_back(synth_detail::sentence_from(
                    {trigger}, 5 + static_cast<int>(rng.next_below(5)), rng));
                int label = role;
                if (config.noise > 0.0 && rng.next_double() < config.noise) {
                    label = static_cast<int>(rng.next_below(kRoleCount));
                }
                example.roles.push_back(label);
            }
        }
        examples.push_back(std::move(example));
    }
    return examples;
}

inline std::vector<CjpeExample> generate_cjpe(int size, std::uint64_t seed,
                                              const SyntheticConfig& config = {}) {
    check(size >= 1, "generate_cjpe: size must be >= 1");
    std::vector<CjpeExample> examples;
    for (int i = 0; i < size; ++i) {
        RngStream rng = RngStream::derive(seed, "synth_cjpe", {static_cast<std::uint64_t>(i)});
        CjpeExample example;
        example.id = "cjpe" + std::to_string(i);
        const bool accept = rng.next_bool();
        std::string text;
        const int body = 24 + static_cast<int>(rng.next_below(12));
        for (int s = 0; s < body; ++s) {
            text += synth_detail::sentence_from({}, 8 + static_cast<int>(rng.next_below(6)), rng);
            text += ' ';
        }
        // verdict-correlated phrasing near the end of the judgment
        const std::vector<std::string> accept_words{"granted", "succeeds", "upheld"};
        const std::vector<std::string> reject_words{"rejected", "fails", "negatived"};
        const auto& verdict = accept ? accept_words : reject_words;
        for (int rep = 0; rep < 4; ++rep) {
            text += synth_detail::sentence_from({verdict[rng.next_below(verdict.size())]},
                                                7 + static_cast<int>(rng.next_below(4)), rng);
            text += ' ';
        }
        example.text = text;
        int label = accept ? 1 : 0;
        if (config.noise > 0.0 && rng.next_double() < config.noise) label = 1 - label;
        example.label = label;
        examples.push_back(std::move(example));
    }
    return examples;
}

// ---------------------------------------------------------------------------
// Synthetic pre-training corpus: a bigram Markov chain over a pronounceable
// lexicon, with light digitization artifacts for the cleaning stage.

struct PretrainCorpusConfig {
    int lexicon_size = 240;
    int min_sentences = 18;
    int max_sentences = 40;
    int min_words = 8;
    int max_words = 18;
    double artifact_rate = 0.08;  // chance of an artifact line after a sentence
    int branching = 2;            // successors per word
};

namespace synth_detail {

inline std::string lexicon_word(int index) {
    static const std::vector<std::string> syllables = {
        "ba", "be", "bi", "bo", "bu", "da", "de", "di", "do", "du", "ka", "ke", "ki",
        "ko", "ku", "la", "le", "li", "lo", "lu", "ma", "me", "mi", "mo", "mu", "na",
        "ne", "ni", "no", "nu", "pa", "pe", "pi", "po", "pu", "ra", "re", "ri", "ro",
        "ru", "sa", "se", "si", "so", "su", "ta", "te", "ti", "to", "tu"};
    const int n = static_cast<int>(syllables.size());
    std::string word = syllables[static_cast<std::size_t>(index % n)] +
                       syllables[static_cast<std::size_t>((index / n) % n)];
    if (index >= n * n) word += syllables[static_cast<std::size_t>((index / (n * n)) % n)];
    return word;
}

}  // namespace synth_detail

// Text is a chain of two-word collocations: concept c always emits the fixed
// phrase (u_c, v_c), and concepts follow a low-branching Markov chain. Every
// token is therefore recoverable from a visible neighbor, which makes masked
// prediction learnable at desk scale while leaving the word identities
// corpus-specific.
inline std::vector<RawDocument> generate_pretrain_corpus(int docs, std::uint64_t seed,
                                                         const PretrainCorpusConfig& config = {}) {
    check(docs >= 1, "generate_pretrain_corpus: need at least one document");
    const int concepts = std::max(2, config.lexicon_size / 2);
    std::vector<RawDocument> corpus;
    for (int d = 0; d < docs; ++d) {
        RngStream rng = RngStream::derive(seed, "synth_corpus", {static_cast<std::uint64_t>(d)});
        RawDocument doc;
        doc.id = "doc" + std::to_string(d);
        doc.court = d % 3 == 0 ? std::optional<std::string>("supreme")
                               : std::optional<std::string>("high");
        doc.year = 1950 + static_cast<int>(rng.next_below(70));
        int current = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(concepts)));
        std::string text;
        const int sentences =
            config.min_sentences +
            static_cast<int>(rng.next_below(
                static_cast<std::uint64_t>(config.max_sentences - config.min_sentences + 1)));
        for (int s = 0; s < sentences; ++s) {
            const int pairs =
                std::max(2, (config.min_words +
                             static_cast<int>(rng.next_below(static_cast<std::uint64_t>(
                                 config.max_words - config.min_words + 1)))) /
                                2);
            for (int w = 0; w < pairs; ++w) {
                text += synth_detail::lexicon_word(2 * current);
                text += ' ';
                text += synth_detail::lexicon_word(2 * current + 1);
                text += w + 1 == pairs ? "." : " ";
                const int branch =
                    static_cast<int>(rng.next_below(static_cast<std::uint64_t>(config.branching)));
                current = (current * 7 + 3 + branch) % concepts;
            }
            if (rng.next_double() < config.artifact_rate) {
                text += "\n-----\nPage " + std::to_string(s + 1) + "\n";
            } else {
                text += s % 6 == 5 ? "\n\n" : " ";
            }
        }
        doc.text = text;
        corpus.push_back(std::move(doc));
    }
    return corpus;
}

}  // namespace lexforge
