#pragma once

#include <algorithm>
#include <array>
#include <cstdint>
#include <fstream>
#include <map>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "lexforge/error.hpp"
#include "lexforge/rng.hpp"

namespace lexforge {

constexpr const char* kContinuationPrefix = "##";

// Token ids 0..4 are always the special tokens, in this order.
enum SpecialId : int { kPadId = 0, kUnkId = 1, kClsId = 2, kSepId = 3, kMaskId = 4 };

inline const std::array<const char*, 5>& special_tokens() {
    static const std::array<const char*, 5> specials = {"[PAD]", "[UNK]", "[CLS]", "[SEP]",
                                                        "[MASK]"};
    return specials;
}

class Vocabulary {
public:
    Vocabulary() {
        for (const char* tok : special_tokens()) add(tok);
    }

    int add(const std::string& token) {
        auto [it, inserted] = id_of_.emplace(token, static_cast<int>(tokens_.size()));
        if (inserted) tokens_.push_back(token);
        return it->second;
    }

    int size() const { return static_cast<int>(tokens_.size()); }

    // -1 if absent
    int lookup(std::string_view token) const {
        auto it = id_of_.find(std::string(token));
        return it == id_of_.end() ? -1 : it->second;
    }

    const std::string& token(int id) const {
        check(id >= 0 && id < size(), "token id out of range: " + std::to_string(id));
        return tokens_[static_cast<std::size_t>(id)];
    }

    const std::vector<std::string>& tokens() const { return tokens_; }

    static bool is_special(int id) { return id >= 0 && id < 5; }

    bool is_continuation(int id) const {
        return token(id).compare(0, 2, kContinuationPrefix) == 0;
    }

    void save(const std::string& path) const {
        std::ofstream out(path);
        check(out.good(), "cannot write vocabulary file: " + path);
        for (const auto& tok : tokens_) out << tok << "\n";
    }

    static Vocabulary load(const std::string& path) {
        std::ifstream in(path);
        check(in.good(), "cannot open vocabulary file: " + path);
        Vocabulary vocab;
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (line.empty()) fail(path + ": empty token at line " + std::to_string(line_no));
            if (line_no <= 5) {
                check(line == special_tokens()[static_cast<std::size_t>(line_no - 1)],
                      path + ": line " + std::to_string(line_no) + " must be " +
                          special_tokens()[static_cast<std::size_t>(line_no - 1)]);
                continue;
            }
            check(vocab.lookup(line) < 0,
                  path + ": duplicate token \"" + line + "\" at line " + std::to_string(line_no));
            vocab.add(line);
        }
        check(line_no >= 5, path + ": vocabulary must start with the five special tokens");
        return vocab;
    }

private:
    std::vector<std::string> tokens_;
    std::unordered_map<std::string, int> id_of_;
};

// ---------------------------------------------------------------------------
// Pre-tokenization: lowercase ASCII, split on whitespace, and make every
// ASCII punctuation character its own word. Bytes >= 0x80 are treated as
// word characters and never split mid-codepoint.

namespace detail {

inline bool is_ascii_space(unsigned char c) {
    return c == ' ' || c == '\t' || c == '\n' || c == '\r' || c == '\f' || c == '\v';
}

inline bool is_ascii_punct(unsigned char c) {
    return (c >= '!' && c <= '/') || (c >= ':' && c <= '@') || (c >= '[' && c <= '`') ||
           (c >= '{' && c <= '~');
}

inline char lower_ascii(char c) {
    return (c >= 'A' && c <= 'Z') ? static_cast<char>(c - 'A' + 'a') : c;
}

inline std::size_t codepoint_len(unsigned char c) {
    if (c < 0x80) return 1;
    if ((c & 0xE0) == 0xC0) return 2;
    if ((c & 0xF0) == 0xE0) return 3;
    if ((c & 0xF8) == 0xF0) return 4;
    return 1;  // stray continuation byte: treat as one unit
}

}  // namespace detail

struct WordSpan {
    std::size_t begin = 0;  // byte offsets
    std::size_t end = 0;
};

inline std::vector<WordSpan> pre_split(std::string_view text) {
    std::vector<WordSpan> words;
    std::size_t i = 0;
    while (i < text.size()) {
        const unsigned char c = static_cast<unsigned char>(text[i]);
        if (detail::is_ascii_space(c)) {
            ++i;
            continue;
        }
        if (detail::is_ascii_punct(c)) {
            words.push_back({i, i + 1});
            ++i;
            continue;
        }
        const std::size_t begin = i;
        while (i < text.size()) {
            const unsigned char w = static_cast<unsigned char>(text[i]);
            if (detail::is_ascii_space(w) || detail::is_ascii_punct(w)) break;
            i += detail::codepoint_len(w);
        }
        words.push_back({begin, std::min(i, text.size())});
    }
    return words;
}

inline std::string lowercase_word(std::string_view raw) {
    std::string out(raw);
    for (char& c : out) c = detail::lower_ascii(c);
    return out;
}

// ---------------------------------------------------------------------------
// Trainer

struct WordPieceConfig {
    int vocab_limit = 30522;
    int min_frequency = 2;
    double sample_fraction = 0.10;  // applied by the caller when sampling docs
};

namespace detail {

struct TrainerWord {
    std::vector<int> symbols;  // indices into the symbol string table
    std::int64_t freq = 0;
};

// Exact comparison of count_a/(l_a*r_a) vs count_b/(l_b*r_b) by
// cross-multiplication; counts fit in 64 bits so the products need 128.
inline int compare_scores(std::int64_t pc_a, std::int64_t denom_a, std::int64_t pc_b,
                          std::int64_t denom_b) {
    const unsigned __int128 lhs =
        static_cast<unsigned __int128>(pc_a) * static_cast<unsigned __int128>(denom_b);
    const unsigned __int128 rhs =
        static_cast<unsigned __int128>(pc_b) * static_cast<unsigned __int128>(denom_a);
    if (lhs > rhs) return 1;
    if (lhs < rhs) return -1;
    return 0;
}

}  // namespace detail

// Learns a WordPiece vocabulary by iterative pair merging. The merge score is
// pair_count / (count(first) * count(second)); merging stops when the
// vocabulary is full or no pair reaches min_frequency. The alphabet (every
// character seen in the sample, in both word-initial and continuation form)
// is always included, so the vocabulary floor is 5 specials + alphabet size.
inline Vocabulary train_wordpiece(const std::vector<std::string>& sample_docs,
                                  const WordPieceConfig& config) {
    check(!sample_docs.empty(), "train_wordpiece: sample is empty");
    check(config.min_frequency >= 1, "train_wordpiece: min_frequency must be >= 1");

    // word frequency over the sample
    std::map<std::string, std::int64_t> word_freq;
    for (const auto& doc : sample_docs) {
        for (const WordSpan& span : pre_split(doc)) {
            word_freq[lowercase_word(
                std::string_view(doc).substr(span.begin, span.end - span.begin))] += 1;
        }
    }
    check(!word_freq.empty(), "train_wordpiece: sample contains no words");

    // symbol table; ids are stable for the whole run
    std::vector<std::string> sym_str;
    std::map<std::string, int> sym_id;
    auto intern = [&](const std::string& s) {
        auto [it, inserted] = sym_id.emplace(s, static_cast<int>(sym_str.size()));
        if (inserted) sym_str.push_back(s);
        return it->second;
    };

    // initial segmentation: one symbol per codepoint, '##' after position 0
    std::vector<detail::TrainerWord> words;
    std::set<std::string> alphabet_chars;
    for (const auto& [word, freq] : word_freq) {
        detail::TrainerWord entry;
        entry.freq = freq;
        std::size_t i = 0;
        bool first = true;
        while (i < word.size()) {
            const std::size_t len = detail::codepoint_len(static_cast<unsigned char>(word[i]));
            const std::string ch = word.substr(i, len);
            alphabet_chars.insert(ch);
            entry.symbols.push_back(intern(first ? ch : kContinuationPrefix + ch));
            i += len;
            first = false;
        }
        words.push_back(std::move(entry));
    }

    Vocabulary vocab;
    for (const auto& ch : alphabet_chars) {
        vocab.add(ch);
        vocab.add(kContinuationPrefix + ch);
    }
    check(vocab.size() <= config.vocab_limit,
          "train_wordpiece: vocab_limit " + std::to_string(config.vocab_limit) +
              " is below the floor of " + std::to_string(vocab.size()) +
              " (5 specials + alphabet)");

    // running counts
    std::vector<std::int64_t> sym_count;
    auto bump_sym = [&](int sym, std::int64_t delta) {
        if (sym >= static_cast<int>(sym_count.size())) sym_count.resize(sym_str.size(), 0);
        sym_count[static_cast<std::size_t>(sym)] += delta;
    };
    using Pair = std::pair<int, int>;
    std::map<Pair, std::int64_t> pair_count;
    std::map<Pair, std::set<std::size_t>> pair_words;

    auto add_word_counts = [&](std::size_t w, std::int64_t sign) {
        const auto& entry = words[w];
        for (int sym : entry.symbols) bump_sym(sym, sign * entry.freq);
        for (std::size_t i = 0; i + 1 < entry.symbols.size(); ++i) {
            const Pair p{entry.symbols[i], entry.symbols[i + 1]};
            pair_count[p] += sign * entry.freq;
            if (sign > 0) pair_words[p].insert(w);
        }
    };
    for (std::size_t w = 0; w < words.size(); ++w) add_word_counts(w, +1);

    while (vocab.size() < config.vocab_limit) {
        // best-scoring pair whose count reaches min_frequency; ties break to
        // the lexicographically smallest (first, second) for determinism
        Pair best{-1, -1};
        std::int64_t best_count = 0, best_denom = 1;
        for (const auto& [p, count] : pair_count) {
            if (count < config.min_frequency) continue;
            const std::int64_t denom = sym_count[static_cast<std::size_t>(p.first)] *
                                       sym_count[static_cast<std::size_t>(p.second)];
            if (best.first < 0) {
                best = p, best_count = count, best_denom = denom;
                continue;
            }
            const int cmp = detail::compare_scores(count, denom, best_count, best_denom);
            if (cmp > 0 || (cmp == 0 && std::pair(sym_str[static_cast<std::size_t>(p.first)],
                                                  sym_str[static_cast<std::size_t>(p.second)]) <
                                            std::pair(sym_str[static_cast<std::size_t>(best.first)],
                                                      sym_str[static_cast<std::size_t>(best.second)]))) {
                best = p, best_count = count, best_denom = denom;
            }
        }
        if (best.first < 0) break;

        const std::string& lhs = sym_str[static_cast<std::size_t>(best.first)];
        const std::string& rhs = sym_str[static_cast<std::size_t>(best.second)];
        std::string merged = lhs + (rhs.compare(0, 2, kContinuationPrefix) == 0
                                        ? rhs.substr(2)
                                        : rhs);
        const int merged_sym = intern(merged);
        bump_sym(merged_sym, 0);  // ensure the count slot exists
        vocab.add(merged);

        const std::set<std::size_t> affected = pair_words[best];
        for (std::size_t w : affected) {
            auto& symbols = words[w].symbols;
            bool contains = false;
            for (std::size_t i = 0; i + 1 < symbols.size() && !contains; ++i) {
                contains = symbols[i] == best.first && symbols[i + 1] == best.second;
            }
            if (!contains) continue;  // stale index from an earlier rewrite
            add_word_counts(w, -1);
            std::vector<int> rewritten;
            rewritten.reserve(symbols.size());
            for (std::size_t i = 0; i < symbols.size();) {
                if (i + 1 < symbols.size() && symbols[i] == best.first &&
                    symbols[i + 1] == best.second) {
                    rewritten.push_back(merged_sym);
                    i += 2;
                } else {
                    rewritten.push_back(symbols[i]);
                    ++i;
                }
            }
            symbols = std::move(rewritten);
            add_word_counts(w, +1);
        }
        pair_count.erase(best);
    }
    return vocab;
}

// Seeded 10% (or configured fraction) document sample for tokenizer training.
inline std::vector<std::string> sample_for_tokenizer(const std::vector<std::string>& docs,
                                                     double fraction, std::uint64_t seed) {
    check(fraction > 0.0 && fraction <= 1.0, "sample fraction must be in (0, 1]");
    std::vector<std::size_t> order(docs.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RngStream rng = RngStream::derive(seed, "tokenizer_sample");
    rng.shuffle(order);
    const std::size_t n = std::max<std::size_t>(
        1, static_cast<std::size_t>(fraction * static_cast<double>(docs.size()) + 0.5));
    std::vector<std::string> sample;
    for (std::size_t i = 0; i < std::min(n, order.size()); ++i) sample.push_back(docs[order[i]]);
    return sample;
}

// ---------------------------------------------------------------------------
// Encoding

struct TokenizedText {
    std::vector<int> ids;
    std::vector<std::uint8_t> word_start;              // 1 iff token begins a whole word
    std::vector<std::pair<int, int>> offsets;          // [char_begin, char_end) byte offsets

    std::size_t size() const { return ids.size(); }
};

constexpr int kMaxWordChars = 100;  // longer words are digitization junk -> [UNK]

// Greedy longest-match-first sub-word segmentation. A word with no valid
// segmentation becomes a single [UNK] spanning the whole word.
inline TokenizedText encode(std::string_view text, const Vocabulary& vocab) {
    TokenizedText out;
    for (const WordSpan& span : pre_split(text)) {
        const std::string word =
            lowercase_word(std::string_view(text).substr(span.begin, span.end - span.begin));

        // codepoint boundaries (byte offsets within the word)
        std::vector<std::size_t> bounds{0};
        while (bounds.back() < word.size()) {
            bounds.push_back(bounds.back() +
                             detail::codepoint_len(static_cast<unsigned char>(word[bounds.back()])));
        }
        const std::size_t n_chars = bounds.size() - 1;

        std::vector<int> ids;
        std::vector<std::uint8_t> starts;
        std::vector<std::pair<int, int>> offsets;
        bool ok = n_chars <= static_cast<std::size_t>(kMaxWordChars);
        std::size_t pos = 0;
        while (ok && pos < n_chars) {
            int match = -1;
            std::size_t match_end = pos;
            for (std::size_t end = n_chars; end > pos; --end) {
                std::string candidate = word.substr(bounds[pos], bounds[end] - bounds[pos]);
                if (pos > 0) candidate = kContinuationPrefix + candidate;
                const int id = vocab.lookup(candidate);
                if (id >= 0) {
                    match = id;
                    match_end = end;
                    break;
                }
            }
            if (match < 0) {
                ok = false;
                break;
            }
            ids.push_back(match);
            starts.push_back(pos == 0 ? 1 : 0);
            offsets.emplace_back(static_cast<int>(span.begin + bounds[pos]),
                                 static_cast<int>(span.begin + bounds[match_end]));
            pos = match_end;
        }

        if (!ok) {
            out.ids.push_back(kUnkId);
            out.word_start.push_back(1);
            out.offsets.emplace_back(static_cast<int>(span.begin), static_cast<int>(span.end));
        } else {
            out.ids.insert(out.ids.end(), ids.begin(), ids.end());
            out.word_start.insert(out.word_start.end(), starts.begin(), starts.end());
            out.offsets.insert(out.offsets.end(), offsets.begin(), offsets.end());
        }
    }
    return out;
}

// Continuation tokens join without a space; specials are dropped.
inline std::string decode(std::span<const int> ids, const Vocabulary& vocab) {
    std::string out;
    for (int id : ids) {
        check(id >= 0 && id < vocab.size(), "decode: token id out of range: " + std::to_string(id));
        if (Vocabulary::is_special(id)) continue;
        const std::string& tok = vocab.token(id);
        if (tok.compare(0, 2, kContinuationPrefix) == 0) {
            out += tok.substr(2);
        } else {
            if (!out.empty()) out += ' ';
            out += tok;
        }
    }
    return out;
}

// ---------------------------------------------------------------------------
// Vocabulary comparison (seven Venn regions over three token sets)

struct VocabOverlap {
    std::uint64_t only_a = 0, only_b = 0, only_c = 0;
    std::uint64_t ab = 0, ac = 0, bc = 0;  // pairwise only
    std::uint64_t abc = 0;

    std::uint64_t union_size() const { return only_a + only_b + only_c + ab + ac + bc + abc; }
};

inline VocabOverlap vocab_overlap(const Vocabulary& a, const Vocabulary& b, const Vocabulary& c) {
    std::unordered_set<std::string> sa(a.tokens().begin(), a.tokens().end());
    std::unordered_set<std::string> sb(b.tokens().begin(), b.tokens().end());
    std::unordered_set<std::string> sc(c.tokens().begin(), c.tokens().end());
    std::unordered_set<std::string> all;
    all.insert(sa.begin(), sa.end());
    all.insert(sb.begin(), sb.end());
    all.insert(sc.begin(), sc.end());

    VocabOverlap counts;
    for (const auto& tok : all) {
        const bool in_a = sa.count(tok) > 0, in_b = sb.count(tok) > 0, in_c = sc.count(tok) > 0;
        if (in_a && in_b && in_c) ++counts.abc;
        else if (in_a && in_b) ++counts.ab;
        else if (in_a && in_c) ++counts.ac;
        else if (in_b && in_c) ++counts.bc;
        else if (in_a) ++counts.only_a;
        else if (in_b) ++counts.only_b;
        else ++counts.only_c;
    }
    return counts;
}

}  // namespace lexforge
