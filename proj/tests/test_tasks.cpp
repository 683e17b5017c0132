#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>

#include "helpers.hpp"
#include "lexforge/finetune.hpp"
#include "lexforge/metrics.hpp"
#include "lexforge/taskdata.hpp"
#include "lexforge/wilcoxon.hpp"

using namespace lexforge;

// ---------------------------------------------------------------------------
// metrics

TEST_CASE("one perfect label and one never-predicted label give macro-F1 0.5", "[tasks]") {
    // two labels over three examples: label 0 predicted perfectly, label 1 never
    std::vector<std::vector<std::uint8_t>> gold{{1, 1}, {0, 1}, {1, 0}};
    std::vector<std::vector<std::uint8_t>> pred{{1, 0}, {0, 0}, {1, 0}};
    auto report = multilabel_metrics(gold, pred, 2);
    REQUIRE(report.per_label[0].f1 == Catch::Approx(1.0));
    REQUIRE(report.per_label[1].f1 == Catch::Approx(0.0));
    REQUIRE(report.macro.f1 == Catch::Approx(0.5));
}

TEST_CASE("predictions equal to gold score all ones", "[tasks]") {
    std::vector<int> gold{0, 1, 2, 1, 0, 2};
    auto report = classification_metrics(gold, gold, 3);
    REQUIRE(report.macro.precision == Catch::Approx(1.0));
    REQUIRE(report.macro.recall == Catch::Approx(1.0));
    REQUIRE(report.macro.f1 == Catch::Approx(1.0));
}

TEST_CASE("hand-computed confusion matrix on a binary case", "[tasks]") {
    // gold [1,0,1], pred [1,1,0]:
    //   label 1: tp=1 fp=1 fn=1 -> P=R=F1=0.5
    //   label 0: tp=0 fp=1 fn=1 -> P=R=F1=0
    //   macro-F1 = 0.25
    std::vector<int> gold{1, 0, 1};
    std::vector<int> pred{1, 1, 0};
    auto report = classification_metrics(gold, pred, 2);
    REQUIRE(report.per_label[1].precision == Catch::Approx(0.5));
    REQUIRE(report.per_label[1].recall == Catch::Approx(0.5));
    REQUIRE(report.per_label[1].f1 == Catch::Approx(0.5));
    REQUIRE(report.per_label[0].f1 == Catch::Approx(0.0));
    REQUIRE(report.macro.f1 == Catch::Approx(0.25));
}

TEST_CASE("macro-F1 never exceeds the best per-label F1", "[tasks]") {
    RngStream rng(5);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int> gold, pred;
        for (int i = 0; i < 40; ++i) {
            gold.push_back(static_cast<int>(rng.next_below(4)));
            pred.push_back(static_cast<int>(rng.next_below(4)));
        }
        auto report = classification_metrics(gold, pred, 4);
        double best = 0;
        for (const auto& prf : report.per_label) {
            best = std::max(best, prf.f1);
            REQUIRE(prf.f1 >= 0.0);
            REQUIRE(prf.f1 <= 1.0);
        }
        REQUIRE(report.macro.f1 <= best + 1e-12);
    }
}

TEST_CASE("metric length mismatches are errors", "[tasks]") {
    REQUIRE_THROWS_AS(classification_metrics({0, 1}, {0}, 2), Error);
}

// ---------------------------------------------------------------------------
// wilcoxon signed rank

TEST_CASE("identical samples are rejected", "[tasks]") {
    std::vector<double> a{1, 2, 3, 4, 5};
    REQUIRE_THROWS_AS(wilcoxon_signed_rank(a, a), Error);
}

TEST_CASE("five positive differences give one-sided p = 1/32", "[tasks]") {
    std::vector<double> a{2, 3, 4, 5, 6};
    std::vector<double> b{1, 1, 1, 1, 1};
    auto result = wilcoxon_signed_rank(a, b, WilcoxonTail::greater);
    REQUIRE(result.statistic == 0.0);
    REQUIRE(result.w_minus == 0.0);
    REQUIRE(result.exact);
    REQUIRE(result.p_value == Catch::Approx(1.0 / 32.0).margin(1e-12));
    auto two = wilcoxon_signed_rank(a, b, WilcoxonTail::two_sided);
    REQUIRE(two.p_value == Catch::Approx(2.0 / 32.0).margin(1e-12));
}

namespace {

// Independent oracle: full sign enumeration with its own rank computation.
double oracle_two_sided(const std::vector<double>& a, const std::vector<double>& b) {
    std::vector<double> abs_d;
    std::vector<int> sign;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = a[i] - b[i];
        if (d == 0.0) continue;
        abs_d.push_back(std::abs(d));
        sign.push_back(d > 0 ? 1 : -1);
    }
    const int n = static_cast<int>(abs_d.size());
    // average ranks
    std::vector<double> ranks(abs_d.size());
    for (std::size_t i = 0; i < abs_d.size(); ++i) {
        double below = 0, equal = 0;
        for (std::size_t j = 0; j < abs_d.size(); ++j) {
            if (abs_d[j] < abs_d[i]) ++below;
            if (abs_d[j] == abs_d[i]) ++equal;
        }
        ranks[i] = below + (equal + 1.0) / 2.0;
    }
    double w_plus = 0, total = 0;
    for (std::size_t i = 0; i < ranks.size(); ++i) {
        total += ranks[i];
        if (sign[i] > 0) w_plus += ranks[i];
    }
    const double w = std::min(w_plus, total - w_plus);
    std::int64_t favorable = 0;
    const std::uint64_t assignments = 1ULL << n;
    for (std::uint64_t mask = 0; mask < assignments; ++mask) {
        double t = 0;
        for (int bit = 0; bit < n; ++bit) {
            if (mask & (1ULL << bit)) t += ranks[static_cast<std::size_t>(bit)];
        }
        if (t <= w + 1e-9 || t >= total - w - 1e-9) ++favorable;
    }
    return static_cast<double>(favorable) / static_cast<double>(assignments);
}

}  // namespace

TEST_CASE("exact p-values match full sign enumeration", "[tasks]") {
    RngStream rng(11);
    for (int trial = 0; trial < 30; ++trial) {
        const int n = 5 + static_cast<int>(rng.next_below(6));  // 5..10
        std::vector<double> a, b;
        for (int i = 0; i < n; ++i) {
            // integer-valued scores produce plenty of rank ties
            a.push_back(static_cast<double>(rng.next_below(8)));
            b.push_back(static_cast<double>(rng.next_below(8)));
        }
        bool all_zero = true;
        for (int i = 0; i < n; ++i) all_zero = all_zero && a[static_cast<std::size_t>(i)] == b[static_cast<std::size_t>(i)];
        if (all_zero) continue;
        int nonzero = 0;
        for (int i = 0; i < n; ++i) {
            if (a[static_cast<std::size_t>(i)] != b[static_cast<std::size_t>(i)]) ++nonzero;
        }
        if (nonzero < 5) continue;
        auto result = wilcoxon_signed_rank(a, b, WilcoxonTail::two_sided);
        REQUIRE(result.exact);
        REQUIRE(result.p_value == Catch::Approx(oracle_two_sided(a, b)).margin(1e-9));
    }
}

TEST_CASE("large samples use the tie-corrected normal approximation", "[tasks]") {
    RngStream rng(13);
    std::vector<double> a, b;
    for (int i = 0; i < 30; ++i) {
        a.push_back(rng.next_gaussian() + 0.8);
        b.push_back(rng.next_gaussian());
    }
    auto result = wilcoxon_signed_rank(a, b, WilcoxonTail::greater);
    REQUIRE_FALSE(result.exact);
    REQUIRE(result.p_value > 0.0);
    REQUIRE(result.p_value < 0.05);  // strong planted shift
    auto flipped = wilcoxon_signed_rank(b, a, WilcoxonTail::greater);
    REQUIRE(flipped.p_value > 0.5);
}

// ---------------------------------------------------------------------------
// task data files

TEST_CASE("task files load with validation", "[tasks]") {
    TempDir dir;
    write_file(dir.file("lsi.jsonl"),
               R"({"id": "a", "sentences": ["one", "two"], "labels": [0, 2]})"
               "\n"
               R"({"id": "b", "sentences": ["three"], "labels": []})"
               "\n");
    auto lsi = load_lsi(dir.file("lsi.jsonl"));
    REQUIRE(lsi.size() == 2);
    REQUIRE(lsi[0].labels == std::vector<int>{0, 2});
    REQUIRE(lsi[1].labels.empty());  // empty label sets are legal

    write_file(dir.file("seg.jsonl"),
               R"({"id": "a", "sentences": ["one", "two"], "roles": [0, 6]})"
               "\n");
    auto seg = load_seg(dir.file("seg.jsonl"));
    REQUIRE(seg.size() == 1);

    write_file(dir.file("seg_bad.jsonl"),
               R"({"id": "a", "sentences": ["one", "two"], "roles": [0]})"
               "\n");
    REQUIRE_THROWS_WITH(load_seg(dir.file("seg_bad.jsonl")),
                        Catch::Matchers::ContainsSubstring("line 1"));

    write_file(dir.file("cjpe.jsonl"), R"({"id": "a", "text": "body", "label": 1})"
                                       "\n");
    auto cjpe = load_cjpe(dir.file("cjpe.jsonl"));
    REQUIRE(cjpe.size() == 1);
    REQUIRE(cjpe[0].label == 1);
}

TEST_CASE("synthetic generation is deterministic per seed", "[tasks]") {
    SyntheticConfig config;
    auto a = generate_lsi(10, 3, config);
    auto b = generate_lsi(10, 3, config);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        REQUIRE(a[i].sentences == b[i].sentences);
        REQUIRE(a[i].labels == b[i].labels);
    }
    auto c = generate_lsi(10, 4, config);
    bool different = false;
    for (std::size_t i = 0; i < a.size(); ++i) different |= a[i].sentences != c[i].sentences;
    REQUIRE(different);
}

TEST_CASE("trigger phrases make the noiseless data Bayes-separable", "[tasks]") {
    SyntheticConfig config;
    config.label_count = 6;
    auto examples = generate_lsi(40, 7, config);
    // classifier that reads the planted triggers
    std::vector<std::vector<std::uint8_t>> gold, pred;
    for (const auto& e : examples) {
        std::string text;
        for (const auto& s : e.sentences) text += s + " ";
        std::vector<std::uint8_t> g(6, 0), p(6, 0);
        for (int l : e.labels) g[static_cast<std::size_t>(l)] = 1;
        for (int l = 0; l < 6; ++l) {
            if (text.find(synth_detail::lsi_trigger(l)) != std::string::npos) {
                p[static_cast<std::size_t>(l)] = 1;
            }
        }
        gold.push_back(g);
        pred.push_back(p);
    }
    auto report = multilabel_metrics(gold, pred, 6);
    REQUIRE(report.macro.f1 == Catch::Approx(1.0));
}

TEST_CASE("noise flips the planted positives at the configured rate", "[tasks]") {
    SyntheticConfig noisy;
    noisy.label_count = 8;
    noisy.noise = 0.2;
    std::int64_t planted = 0, flipped = 0;
    int chunk = 0;
    while (planted < 10000) {
        auto examples = generate_lsi(500, 100 + static_cast<std::uint64_t>(chunk++), noisy);
        for (const auto& e : examples) {
            std::set<int> kept(e.labels.begin(), e.labels.end());
            std::string text;
            for (const auto& s : e.sentences) text += s + " ";
            for (int l = 0; l < 8; ++l) {
                if (text.find(synth_detail::lsi_trigger(l)) == std::string::npos) continue;
                ++planted;
                if (kept.count(l) == 0) ++flipped;
            }
        }
    }
    const double rate = static_cast<double>(flipped) / static_cast<double>(planted);
    REQUIRE(rate == Catch::Approx(0.2).margin(0.02));
}

TEST_CASE("synthetic corpora have artifacts and enough length to chunk", "[tasks]") {
    auto corpus = generate_pretrain_corpus(20, 5);
    REQUIRE(corpus.size() == 20);
    bool some_artifact = false;
    for (const auto& doc : corpus) {
        REQUIRE(!doc.text.empty());
        some_artifact = some_artifact || doc.text.find("-----") != std::string::npos;
    }
    REQUIRE(some_artifact);
    auto again = generate_pretrain_corpus(20, 5);
    REQUIRE(again[7].text == corpus[7].text);
}

// ---------------------------------------------------------------------------
// folds

TEST_CASE("fifty examples split into five folds of ten", "[tasks]") {
    auto folds = make_folds(50, 5, 9);
    REQUIRE(folds.size() == 5);
    std::set<std::size_t> seen;
    for (const auto& fold : folds) {
        REQUIRE(fold.size() == 10);
        for (auto i : fold) REQUIRE(seen.insert(i).second);
    }
    REQUIRE(seen.size() == 50);
    auto again = make_folds(50, 5, 9);
    REQUIRE(folds == again);
    REQUIRE_THROWS_AS(make_folds(3, 5, 9), Error);
}

// ---------------------------------------------------------------------------
// fine-tuning driver (small smoke; the full overfit runs live in acceptance)

namespace {

Vocabulary task_vocab() {
    std::vector<std::string> docs;
    auto lsi = generate_lsi(20, 1);
    for (const auto& e : lsi) {
        for (const auto& s : e.sentences) docs.push_back(s);
    }
    auto seg = generate_seg(10, 2);
    for (const auto& e : seg) {
        for (const auto& s : e.sentences) docs.push_back(s);
    }
    WordPieceConfig config;
    config.vocab_limit = 600;
    config.min_frequency = 1;
    return train_wordpiece(docs, config);
}

}  // namespace

TEST_CASE("early stopping restores the best epoch and never regresses", "[tasks][slow]") {
    auto vocab = task_vocab();
    EncoderConfig enc;
    enc.layers = 1;
    enc.hidden = 16;
    enc.heads = 2;
    enc.ff_dim = 32;
    enc.max_position = 24;
    enc.vocab_size = vocab.size();
    auto pretrained = Parameters<float>::init(enc, 3);

    FinetuneConfig config;
    config.max_epochs = 6;
    config.patience = 2;
    config.batch_size = 4;
    config.hier.max_segments = 12;
    config.hier.segment_len = 20;
    config.hier.lstm_hidden = 8;
    config.hier.attn_dim = 8;
    config.seed = 5;

    const int labels = 4;
    SyntheticConfig synth;
    synth.label_count = labels;
    auto examples = generate_lsi(24, 11, synth);
    std::vector<LabeledDoc> train, dev, test;
    for (std::size_t i = 0; i < examples.size(); ++i) {
        auto doc = prepare_lsi_doc(examples[i], vocab, config.hier, labels);
        (i < 16 ? train : (i < 20 ? dev : test)).push_back(doc);
    }

    auto outcome = run_finetune(TaskKind::lsi, train, dev, test, labels, pretrained, enc, config);
    REQUIRE(outcome.best_epoch >= 1);
    REQUIRE(outcome.best_epoch <= outcome.epochs_run);
    REQUIRE(!outcome.dev_history.empty());
    // the restored model's dev score equals the best epoch's score, which is
    // never below the first epoch's
    const double best = *std::max_element(outcome.dev_history.begin(), outcome.dev_history.end());
    REQUIRE(outcome.dev.macro.f1 == Catch::Approx(best).margin(1e-12));
    REQUIRE(outcome.dev.macro.f1 >= outcome.dev_history.front() - 1e-12);
}
