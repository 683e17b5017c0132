// Command-line front end for the legal language-model pipeline: corpus
// preparation, vocabulary training, MLM+NSP pre-training, perplexity
// evaluation, hierarchical fine-tuning, attention explainability and
// vocabulary comparison. Every command resolves its settings as
// defaults < --config JSON < command-line flags, echoes the resolved
// configuration into the output directory, and derives all randomness from
// one master seed.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <thread>
#include <vector>

#include "lexforge/checkpoint.hpp"
#include "lexforge/corpus.hpp"
#include "lexforge/explain.hpp"
#include "lexforge/finetune.hpp"
#include "lexforge/pretrain.hpp"
#include "lexforge/taskdata.hpp"
#include "lexforge/wilcoxon.hpp"
#include "lexforge/wordpiece.hpp"

namespace fs = std::filesystem;
using namespace lexforge;

namespace {

int default_workers() {
    const unsigned hw = std::thread::hardware_concurrency();
    return static_cast<int>(std::min(8u, hw == 0 ? 1u : hw));
}

// One command's settings. Values resolve as defaults < config file < flags;
// unknown keys in the config file are rejected.
class Settings {
public:
    explicit Settings(CLI::App* cmd) : cmd_(cmd) {
        cmd_->add_option("--config", config_path_, "JSON settings file");
    }

    void add_string(const std::string& key, const std::string& def, const std::string& desc) {
        values_[key] = def;
        strings_[key] = def;
        options_[key] = cmd_->add_option("--" + key, strings_[key], desc);
    }

    void add_int(const std::string& key, std::int64_t def, const std::string& desc) {
        values_[key] = def;
        ints_[key] = def;
        options_[key] = cmd_->add_option("--" + key, ints_[key], desc);
    }

    void add_double(const std::string& key, double def, const std::string& desc) {
        values_[key] = def;
        doubles_[key] = def;
        options_[key] = cmd_->add_option("--" + key, doubles_[key], desc);
    }

    void add_string_list(const std::string& key, const std::string& desc) {
        values_[key] = json::array();
        lists_[key] = {};
        options_[key] = cmd_->add_option("--" + key, lists_[key], desc);
    }

    void resolve() {
        if (!config_path_.empty()) {
            json file = read_json_file(config_path_);
            check(file.is_object(), config_path_ + ": config must be a JSON object");
            for (const auto& [key, value] : file.items()) {
                check(values_.contains(key),
                      config_path_ + ": unknown config key \"" + key + "\"");
                values_[key] = value;
            }
        }
        for (const auto& [key, option] : options_) {
            if (option->count() == 0) continue;
            if (strings_.count(key)) values_[key] = strings_[key];
            else if (ints_.count(key)) values_[key] = ints_[key];
            else if (doubles_.count(key)) values_[key] = doubles_[key];
            else values_[key] = lists_[key];
        }
    }

    std::string str(const std::string& key) const { return values_.at(key).get<std::string>(); }
    std::int64_t integer(const std::string& key) const {
        return values_.at(key).get<std::int64_t>();
    }
    double number(const std::string& key) const { return values_.at(key).get<double>(); }
    std::vector<std::string> list(const std::string& key) const {
        return values_.at(key).get<std::vector<std::string>>();
    }

    // resolved values plus the command name, written as the run manifest
    json manifest(const std::string& command) const {
        json m = values_;
        m["command"] = command;
        return m;
    }

private:
    CLI::App* cmd_;
    std::string config_path_;
    json values_ = json::object();
    std::map<std::string, std::string> strings_;
    std::map<std::string, std::int64_t> ints_;
    std::map<std::string, double> doubles_;
    std::map<std::string, std::vector<std::string>> lists_;
    std::map<std::string, CLI::Option*> options_;
};

std::string prepare_out_dir(const Settings& settings, const std::string& command) {
    const std::string out = settings.str("out");
    check(!out.empty(), "--out is required");
    fs::create_directories(out);
    write_json_file((fs::path(out) / "config.resolved.json").string(),
                    settings.manifest(command));
    return out;
}

std::vector<RawDocument> load_corpus_side(const std::string& corpus_path,
                                          const std::string& split_path, bool train_side) {
    auto docs = ingest(corpus_path);
    if (split_path.empty()) return docs;
    auto split = CorpusSplit::from_json(read_json_file(split_path));
    const auto& ids = train_side ? split.train : split.test;
    std::set<std::string> keep(ids.begin(), ids.end());
    std::vector<RawDocument> side;
    for (auto& doc : docs) {
        if (keep.count(doc.id)) side.push_back(std::move(doc));
    }
    check(!side.empty(), "no documents left after applying the split file");
    return side;
}

std::vector<ChunkedDoc> chunk_corpus(const std::vector<RawDocument>& docs,
                                     const Vocabulary& vocab, int chunk_len) {
    std::vector<ChunkedDoc> chunked;
    for (const auto& doc : docs) {
        auto chunks = chunk_document(doc.id, encode(doc.text, vocab), chunk_len);
        if (!chunks.empty()) chunked.push_back(std::move(chunks));
    }
    check(!chunked.empty(), "corpus is empty after tokenization");
    return chunked;
}

// ---------------------------------------------------------------------------
// command bodies

int run_synth_data(const Settings& settings) {
    const std::string out = prepare_out_dir(settings, "synth-data");
    const std::string task = settings.str("task");
    const int size = static_cast<int>(settings.integer("size"));
    const auto seed = static_cast<std::uint64_t>(settings.integer("seed"));
    SyntheticConfig config;
    config.label_count = static_cast<int>(settings.integer("labels"));
    config.noise = settings.number("noise");

    if (task == "pretrain") {
        auto corpus = generate_pretrain_corpus(size, seed);
        write_corpus((fs::path(out) / "corpus.jsonl").string(), corpus);
        std::cout << "wrote " << corpus.size() << " documents\n";
    } else if (task == "lsi") {
        save_lsi((fs::path(out) / "lsi.jsonl").string(), generate_lsi(size, seed, config));
        std::cout << "wrote " << size << " lsi examples\n";
    } else if (task == "seg") {
        save_seg((fs::path(out) / "seg.jsonl").string(), generate_seg(size, seed, config));
        std::cout << "wrote " << size << " seg examples\n";
    } else if (task == "cjpe") {
        save_cjpe((fs::path(out) / "cjpe.jsonl").string(), generate_cjpe(size, seed, config));
        std::cout << "wrote " << size << " cjpe examples\n";
    } else {
        fail("unknown synthetic task \"" + task + "\" (pretrain|lsi|seg|cjpe)");
    }
    return 0;
}

int run_prep(const Settings& settings) {
    const std::string out = prepare_out_dir(settings, "prep");
    auto docs = ingest(settings.str("input"));
    const auto rules = settings.str("rules").empty() ? CleaningRuleSet::defaults()
                                                     : CleaningRuleSet::load(settings.str("rules"));
    std::vector<RawDocument> cleaned;
    int dropped = 0;
    for (auto& doc : docs) {
        std::string text = clean_text(doc, rules);
        if (text.empty()) {
            ++dropped;
            continue;
        }
        doc.text = std::move(text);
        cleaned.push_back(std::move(doc));
    }
    auto split = split_corpus(cleaned, static_cast<std::uint64_t>(settings.integer("seed")));
    write_corpus((fs::path(out) / "cleaned.jsonl").string(), cleaned);
    write_json_file((fs::path(out) / "split.json").string(), split.to_json());
    std::cout << "cleaned " << cleaned.size() << " documents (" << dropped
              << " dropped as empty), train " << split.train.size() << " / test "
              << split.test.size() << "\n";
    return 0;
}

int run_vocab(const Settings& settings) {
    const std::string out = prepare_out_dir(settings, "vocab");
    auto docs = load_corpus_side(settings.str("input"), settings.str("split"), true);
    std::vector<std::string> texts;
    texts.reserve(docs.size());
    for (auto& doc : docs) texts.push_back(std::move(doc.text));

    WordPieceConfig config;
    config.vocab_limit = static_cast<int>(settings.integer("vocab-limit"));
    config.min_frequency = static_cast<int>(settings.integer("min-frequency"));
    config.sample_fraction = settings.number("sample-fraction");
    auto sample = sample_for_tokenizer(texts, config.sample_fraction,
                                       static_cast<std::uint64_t>(settings.integer("seed")));
    auto vocab = train_wordpiece(sample, config);
    vocab.save((fs::path(out) / "vocab.txt").string());
    std::cout << "vocabulary of " << vocab.size() << " tokens from " << sample.size()
              << " sampled documents\n";
    return 0;
}

EncoderConfig encoder_config_from(const Settings& settings, int vocab_size) {
    EncoderConfig config;
    config.layers = static_cast<int>(settings.integer("layers"));
    config.hidden = static_cast<int>(settings.integer("hidden"));
    config.heads = static_cast<int>(settings.integer("heads"));
    config.ff_dim = static_cast<int>(settings.integer("ff-dim"));
    config.max_position = static_cast<int>(settings.integer("max-position"));
    config.dropout = settings.number("dropout");
    config.vocab_size = vocab_size;
    config.validate();
    return config;
}

int run_pretrain(const Settings& settings) {
    const std::string out = prepare_out_dir(settings, "pretrain");
    auto vocab = Vocabulary::load(settings.str("vocab"));
    auto docs = load_corpus_side(settings.str("corpus"), settings.str("split"), true);
    const int chunk_len = static_cast<int>(settings.integer("chunk-len"));
    auto chunked = chunk_corpus(docs, vocab, chunk_len);

    PretrainConfig config;
    config.steps = static_cast<int>(settings.integer("steps"));
    config.batch_size = static_cast<int>(settings.integer("batch-size"));
    config.chunk_len = chunk_len;
    config.masking.mask_rate = settings.number("mask-rate");
    config.optimizer.lr = settings.number("lr");
    config.optimizer.weight_decay = settings.number("weight-decay");
    config.checkpoint_interval = static_cast<int>(settings.integer("checkpoint-interval"));
    config.workers = static_cast<int>(settings.integer("workers"));

    EncoderConfig enc_config;
    PretrainState resume_state;
    const PretrainState* resume = nullptr;
    const auto master_seed = static_cast<std::uint64_t>(settings.integer("seed"));
    if (!settings.str("resume").empty()) {
        auto ckpt = Checkpoint::load(settings.str("resume"));
        resume_state = load_pretrain_state(ckpt, enc_config);
        resume = &resume_state;
    } else {
        enc_config = encoder_config_from(settings, vocab.size());
    }

    std::ofstream metrics((fs::path(out) / "metrics.jsonl").string());
    check(metrics.good(), "cannot write metrics log");
    PretrainSinks sinks;
    sinks.on_step = [&](const StepMetrics& m) {
        metrics << json{{"step", m.step}, {"mlm_loss", m.mlm_loss}, {"nsp_loss", m.nsp_loss}}
                       .dump()
                << "\n";
    };
    sinks.on_checkpoint = [&](const PretrainState& state, bool is_final) {
        PretrainState& mutable_state = const_cast<PretrainState&>(state);
        auto ckpt = make_pretrain_checkpoint(enc_config, mutable_state, master_seed);
        ckpt.save((fs::path(out) / ("checkpoint_step_" + std::to_string(state.step) + ".lxfg"))
                      .string());
        if (is_final) ckpt.save((fs::path(out) / "checkpoint.lxfg").string());
    };

    auto result = pretrain(chunked, vocab, enc_config, config, master_seed, resume, &sinks);
    if (!result.history.empty()) {
        std::cout << "step " << result.history.back().step << " mlm_loss "
                  << result.history.back().mlm_loss << " nsp_loss "
                  << result.history.back().nsp_loss << "\n";
    }
    std::cout << "final checkpoint: " << (fs::path(out) / "checkpoint.lxfg").string() << "\n";
    return 0;
}

int run_perplexity(const Settings& settings) {
    const std::string out = prepare_out_dir(settings, "perplexity");
    auto vocab = Vocabulary::load(settings.str("vocab"));
    auto ckpt = Checkpoint::load(settings.str("checkpoint"));
    EncoderConfig enc_config;
    auto state = load_pretrain_state(ckpt, enc_config);
    auto docs = load_corpus_side(settings.str("corpus"), settings.str("split"), false);
    auto chunked = chunk_corpus(docs, vocab, static_cast<int>(settings.integer("chunk-len")));

    MaskingConfig masking;
    masking.mask_rate = settings.number("mask-rate");
    const double ppl = evaluate_perplexity(
        state.params, enc_config, chunked, vocab,
        static_cast<std::uint64_t>(settings.integer("eval-seed")), masking,
        static_cast<int>(settings.integer("batch-size")));
    write_json_file((fs::path(out) / "perplexity.json").string(),
                    json{{"perplexity", ppl}, {"documents", chunked.size()}});
    std::cout << "perplexity " << ppl << " over " << chunked.size() << " documents\n";
    return 0;
}

struct PreparedTask {
    TaskKind task;
    int labels = 0;
    std::vector<std::string> ids;
    std::vector<LabeledDoc> docs;
};

PreparedTask prepare_task_docs(TaskKind task, const std::string& path, const Vocabulary& vocab,
                               const HierConfig& hier, int label_count) {
    PreparedTask prepared;
    prepared.task = task;
    if (task == TaskKind::lsi) {
        auto examples = load_lsi(path);
        int max_label = -1;
        for (const auto& e : examples) {
            for (int l : e.labels) max_label = std::max(max_label, l);
        }
        prepared.labels = label_count > 0 ? label_count : max_label + 1;
        check(prepared.labels >= 1, path + ": no labels present; pass --labels");
        for (const auto& e : examples) {
            prepared.ids.push_back(e.id);
            prepared.docs.push_back(prepare_lsi_doc(e, vocab, hier, prepared.labels));
        }
    } else if (task == TaskKind::seg) {
        prepared.labels = kRoleCount;
        for (const auto& e : load_seg(path)) {
            prepared.ids.push_back(e.id);
            prepared.docs.push_back(prepare_seg_doc(e, vocab, hier));
        }
    } else {
        prepared.labels = 2;
        for (const auto& e : load_cjpe(path)) {
            prepared.ids.push_back(e.id);
            prepared.docs.push_back(prepare_cjpe_doc(e, vocab, hier));
        }
    }
    check(!prepared.docs.empty(), path + ": no examples");
    return prepared;
}

HierConfig hier_config_from(const Settings& settings, TaskKind task) {
    HierConfig hier;
    hier.segment_len = static_cast<int>(settings.integer("segment-len"));
    hier.max_segments = static_cast<int>(settings.integer("max-segments"));
    hier.lstm_hidden = static_cast<int>(settings.integer("lstm-hidden"));
    hier.attn_dim = static_cast<int>(settings.integer("attn-dim"));
    hier.selection = task == TaskKind::cjpe ? SegmentSelection::last_k : SegmentSelection::first_k;
    hier.validate();
    return hier;
}

json metrics_to_json(const MetricsReport& report) { return report.to_json(); }

int run_finetune_cmd(const Settings& settings) {
    const std::string out = prepare_out_dir(settings, "finetune");
    const TaskKind task = task_from_name(settings.str("task"));
    auto vocab = Vocabulary::load(settings.str("vocab"));
    auto ckpt = Checkpoint::load(settings.str("checkpoint"));
    EncoderConfig enc_config;
    auto state = load_pretrain_state(ckpt, enc_config);

    FinetuneConfig config;
    config.max_epochs = static_cast<int>(settings.integer("epochs"));
    config.patience = static_cast<int>(settings.integer("patience"));
    config.batch_size = static_cast<int>(settings.integer("batch-size"));
    config.lr_encoder = settings.number("lr-encoder");
    config.lr_upper = settings.number("lr-upper");
    config.lr_head = settings.number("lr-head");
    config.adamw.weight_decay = settings.number("weight-decay");
    config.threshold = settings.number("threshold");
    config.seed = static_cast<std::uint64_t>(settings.integer("seed"));
    config.hier = hier_config_from(settings, task);
    const int label_opt = static_cast<int>(settings.integer("labels"));

    const int cv = static_cast<int>(settings.integer("cv"));
    if (cv > 0) {
        auto prepared = prepare_task_docs(task, settings.str("data"), vocab, config.hier,
                                          label_opt);
        auto result = cross_validate(task, prepared.docs, prepared.labels, cv, state.params,
                                     enc_config, config);
        json folds = json::array();
        for (const auto& fold : result.folds) folds.push_back(metrics_to_json(fold));
        write_json_file((fs::path(out) / "cv.json").string(),
                        json{{"folds", folds},
                             {"mean",
                              {{"precision", result.mean.macro.precision},
                               {"recall", result.mean.macro.recall},
                               {"f1", result.mean.macro.f1}}}});
        std::cout << "cross-validated macro-F1 " << result.mean.macro.f1 << " over " << cv
                  << " folds\n";
        return 0;
    }

    auto train = prepare_task_docs(task, settings.str("train"), vocab, config.hier, label_opt);
    auto dev = prepare_task_docs(task, settings.str("dev"), vocab, config.hier, train.labels);
    auto test = prepare_task_docs(task, settings.str("test"), vocab, config.hier, train.labels);
    auto outcome = run_finetune(task, train.docs, dev.docs, test.docs, train.labels,
                                state.params, enc_config, config);

    auto model_ckpt = make_finetune_checkpoint(outcome.model);
    model_ckpt.save((fs::path(out) / "model.lxfg").string());
    write_json_file((fs::path(out) / "metrics.json").string(),
                    json{{"dev", metrics_to_json(outcome.dev)},
                         {"test", metrics_to_json(outcome.test)},
                         {"best_epoch", outcome.best_epoch},
                         {"epochs_run", outcome.epochs_run},
                         {"dev_f1_history", outcome.dev_history}});
    std::cout << "best epoch " << outcome.best_epoch << ", dev macro-F1 "
              << outcome.dev.macro.f1 << ", test macro-F1 " << outcome.test.macro.f1 << "\n";
    return 0;
}

int run_evaluate(const Settings& settings) {
    const std::string out = prepare_out_dir(settings, "evaluate");
    auto vocab = Vocabulary::load(settings.str("vocab"));
    auto model = load_finetune_model(Checkpoint::load(settings.str("model")));
    auto prepared = prepare_task_docs(model.task, settings.str("data"), vocab,
                                      model.hier_config, model.labels);
    const auto weights = std::vector<double>(
        model.task == TaskKind::lsi ? static_cast<std::size_t>(model.labels) : 1, 1.0);
    auto report = evaluate_docs(model, prepared.docs, weights, settings.number("threshold"));
    write_json_file((fs::path(out) / "metrics.json").string(), metrics_to_json(report));

    const std::string dump = settings.str("dump-attention");
    if (!dump.empty()) {
        std::ofstream attn(dump);
        check(attn.good(), "cannot write attention dump: " + dump);
        for (std::size_t i = 0; i < prepared.docs.size(); ++i) {
            auto result = doc_loss_and_grads(model, prepared.docs[i], weights);
            std::vector<double> attention(result.attention.size());
            for (Eigen::Index a = 0; a < result.attention.size(); ++a) {
                attention[static_cast<std::size_t>(a)] =
                    static_cast<double>(result.attention[a]);
            }
            attn << json{{"doc_id", prepared.ids[i]}, {"attention", attention}}.dump() << "\n";
        }
    }
    std::cout << "macro-F1 " << report.macro.f1 << " on " << prepared.docs.size()
              << " examples\n";
    return 0;
}

int run_explain(const Settings& settings) {
    const std::string out = prepare_out_dir(settings, "explain");
    auto vocab = Vocabulary::load(settings.str("vocab"));
    auto docs = ingest(settings.str("corpus"));
    std::map<std::string, std::string> texts;
    for (auto& doc : docs) texts[doc.id] = std::move(doc.text);
    auto annotations = load_annotations(settings.str("annotations"));

    ModelAttention attention;
    for (const auto& spec : settings.list("attention")) {
        const auto eq = spec.find('=');
        check(eq != std::string::npos,
              "--attention expects NAME=PATH, got \"" + spec + "\"");
        const std::string name = spec.substr(0, eq);
        for_each_jsonl_record(spec.substr(eq + 1), [&](int line_no, const json& record) {
            check(record.contains("doc_id") && record.contains("attention"),
                  spec.substr(eq + 1) + " line " + std::to_string(line_no) +
                      ": need doc_id and attention");
            attention[name][record["doc_id"].get<std::string>()] =
                record["attention"].get<std::vector<double>>();
        });
    }

    const auto selection = settings.str("window") == "first" ? SegmentSelection::first_k
                                                             : SegmentSelection::last_k;
    auto report = agreement_report(attention, annotations, texts, vocab,
                                   static_cast<int>(settings.integer("chunk-tokens")),
                                   static_cast<int>(settings.integer("max-chunks")), selection);
    write_json_file((fs::path(out) / "report.json").string(), report.to_json());
    std::ofstream table((fs::path(out) / "report.txt").string());
    table << report.to_table();
    std::cout << report.to_table();
    if (!report.excluded.empty()) {
        std::cout << "excluded (no annotated tokens in window):";
        for (const auto& e : report.excluded) std::cout << " " << e;
        std::cout << "\n";
    }
    return 0;
}

int run_compare_vocab(const Settings& settings) {
    const std::string out = prepare_out_dir(settings, "compare-vocab");
    auto a = Vocabulary::load(settings.str("a"));
    auto b = Vocabulary::load(settings.str("b"));
    auto c = Vocabulary::load(settings.str("c"));
    auto counts = vocab_overlap(a, b, c);
    json result{{"only_a", counts.only_a}, {"only_b", counts.only_b},
                {"only_c", counts.only_c}, {"ab", counts.ab},
                {"ac", counts.ac},         {"bc", counts.bc},
                {"abc", counts.abc},       {"union", counts.union_size()}};
    write_json_file((fs::path(out) / "overlap.json").string(), result);
    std::cout << result.dump(2) << "\n";
    return 0;
}

void add_common(Settings& settings) {
    settings.add_string("out", "", "output directory (required)");
    settings.add_int("seed", 1, "master seed");
    settings.add_int("workers", default_workers(), "worker threads (capped at 8)");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"lexforge: legal language-model pipeline"};
    app.require_subcommand(1);

    auto* synth = app.add_subcommand("synth-data", "generate synthetic datasets");
    Settings synth_settings(synth);
    add_common(synth_settings);
    synth_settings.add_string("task", "pretrain", "pretrain|lsi|seg|cjpe");
    synth_settings.add_int("size", 100, "number of documents/examples");
    synth_settings.add_int("labels", 8, "label-set size (lsi)");
    synth_settings.add_double("noise", 0.0, "label corruption rate");

    auto* prep = app.add_subcommand("prep", "clean a corpus and split it 9:1");
    Settings prep_settings(prep);
    add_common(prep_settings);
    prep_settings.add_string("input", "", "raw corpus JSONL");
    prep_settings.add_string("rules", "", "cleaning rules JSON (default rules if omitted)");

    auto* vocab_cmd = app.add_subcommand("vocab", "train a WordPiece vocabulary");
    Settings vocab_settings(vocab_cmd);
    add_common(vocab_settings);
    vocab_settings.add_string("input", "", "cleaned corpus JSONL");
    vocab_settings.add_string("split", "", "split.json (restricts to the train side)");
    vocab_settings.add_int("vocab-limit", 30522, "maximum vocabulary size");
    vocab_settings.add_int("min-frequency", 2, "minimum pair frequency for merges");
    vocab_settings.add_double("sample-fraction", 0.10, "fraction of documents to sample");

    auto* pretrain_cmd = app.add_subcommand("pretrain", "MLM+NSP pre-training");
    Settings pretrain_settings(pretrain_cmd);
    add_common(pretrain_settings);
    pretrain_settings.add_string("corpus", "", "cleaned corpus JSONL");
    pretrain_settings.add_string("split", "", "split.json (train side)");
    pretrain_settings.add_string("vocab", "", "vocabulary file");
    pretrain_settings.add_string("resume", "", "checkpoint to resume from");
    pretrain_settings.add_int("steps", 100, "optimization steps");
    pretrain_settings.add_int("batch-size", 8, "sequence pairs per step");
    pretrain_settings.add_int("chunk-len", 254, "tokens per chunk");
    pretrain_settings.add_int("layers", 4, "encoder layers");
    pretrain_settings.add_int("hidden", 128, "hidden width");
    pretrain_settings.add_int("heads", 4, "attention heads");
    pretrain_settings.add_int("ff-dim", 512, "feed-forward width");
    pretrain_settings.add_int("max-position", 512, "maximum sequence length");
    pretrain_settings.add_double("dropout", 0.0, "dropout probability");
    pretrain_settings.add_double("lr", 5e-5, "AdamW learning rate");
    pretrain_settings.add_double("weight-decay", 0.01, "decoupled weight decay");
    pretrain_settings.add_double("mask-rate", 0.15, "masking rate");
    pretrain_settings.add_int("checkpoint-interval", 0, "steps between checkpoints (0: steps/10)");

    auto* ppl = app.add_subcommand("perplexity", "held-out MLM perplexity");
    Settings ppl_settings(ppl);
    add_common(ppl_settings);
    ppl_settings.add_string("checkpoint", "", "pre-training checkpoint");
    ppl_settings.add_string("corpus", "", "cleaned corpus JSONL");
    ppl_settings.add_string("split", "", "split.json (test side)");
    ppl_settings.add_string("vocab", "", "vocabulary file");
    ppl_settings.add_int("chunk-len", 254, "tokens per chunk");
    ppl_settings.add_int("batch-size", 8, "evaluation batch size");
    ppl_settings.add_int("eval-seed", 2024, "fixed evaluation masking seed");
    ppl_settings.add_double("mask-rate", 0.15, "masking rate");

    auto* ft = app.add_subcommand("finetune", "fine-tune on a downstream task");
    Settings ft_settings(ft);
    add_common(ft_settings);
    ft_settings.add_string("task", "", "lsi|seg|cjpe");
    ft_settings.add_string("train", "", "training JSONL");
    ft_settings.add_string("dev", "", "validation JSONL");
    ft_settings.add_string("test", "", "test JSONL");
    ft_settings.add_string("data", "", "single JSONL for --cv mode");
    ft_settings.add_int("cv", 0, "k-fold cross-validation (0: use train/dev/test)");
    ft_settings.add_string("checkpoint", "", "pre-training checkpoint");
    ft_settings.add_string("vocab", "", "vocabulary file");
    ft_settings.add_int("labels", 0, "label count (lsi; 0 = infer)");
    ft_settings.add_int("epochs", 25, "maximum epochs");
    ft_settings.add_int("patience", 5, "early-stopping patience");
    ft_settings.add_int("batch-size", 4, "documents per step");
    ft_settings.add_double("lr-encoder", 1e-5, "learning rate, lower encoder");
    ft_settings.add_double("lr-upper", 1e-3, "learning rate, upper encoder");
    ft_settings.add_double("lr-head", 1e-3, "learning rate, classification head");
    ft_settings.add_double("weight-decay", 0.01, "decoupled weight decay");
    ft_settings.add_int("segment-len", 128, "tokens per segment");
    ft_settings.add_int("max-segments", 128, "segments per document");
    ft_settings.add_int("lstm-hidden", 128, "recurrent hidden size");
    ft_settings.add_int("attn-dim", 128, "attention dimension");
    ft_settings.add_double("threshold", 0.5, "sigmoid decision threshold");

    auto* eval = app.add_subcommand("evaluate", "evaluate a fine-tuned model");
    Settings eval_settings(eval);
    add_common(eval_settings);
    eval_settings.add_string("model", "", "fine-tuned model file");
    eval_settings.add_string("vocab", "", "vocabulary file");
    eval_settings.add_string("data", "", "evaluation JSONL");
    eval_settings.add_double("threshold", 0.5, "sigmoid decision threshold");
    eval_settings.add_string("dump-attention", "", "write per-document attention JSONL here");

    auto* explain_cmd = app.add_subcommand("explain", "attention vs expert annotations");
    Settings explain_settings(explain_cmd);
    add_common(explain_settings);
    explain_settings.add_string("corpus", "", "document JSONL (id + text)");
    explain_settings.add_string("annotations", "", "expert annotation JSONL");
    explain_settings.add_string_list("attention", "model attention as NAME=PATH (repeatable)");
    explain_settings.add_string("vocab", "", "vocabulary file");
    explain_settings.add_int("chunk-tokens", 126, "tokens per chunk");
    explain_settings.add_int("max-chunks", 128, "chunk window size");
    explain_settings.add_string("window", "last", "window anchor: first|last");

    auto* compare = app.add_subcommand("compare-vocab", "seven-region vocabulary overlap");
    Settings compare_settings(compare);
    add_common(compare_settings);
    compare_settings.add_string("a", "", "first vocabulary");
    compare_settings.add_string("b", "", "second vocabulary");
    compare_settings.add_string("c", "", "third vocabulary");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    try {
        if (synth->parsed()) {
            synth_settings.resolve();
            return run_synth_data(synth_settings);
        }
        if (prep->parsed()) {
            prep_settings.resolve();
            return run_prep(prep_settings);
        }
        if (vocab_cmd->parsed()) {
            vocab_settings.resolve();
            return run_vocab(vocab_settings);
        }
        if (pretrain_cmd->parsed()) {
            pretrain_settings.resolve();
            return run_pretrain(pretrain_settings);
        }
        if (ppl->parsed()) {
            ppl_settings.resolve();
            return run_perplexity(ppl_settings);
        }
        if (ft->parsed()) {
            ft_settings.resolve();
            return run_finetune_cmd(ft_settings);
        }
        if (eval->parsed()) {
            eval_settings.resolve();
            return run_evaluate(eval_settings);
        }
        if (explain_cmd->parsed()) {
            explain_settings.resolve();
            return run_explain(explain_settings);
        }
        if (compare->parsed()) {
            compare_settings.resolve();
            return run_compare_vocab(compare_settings);
        }
    } catch (const Error& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
