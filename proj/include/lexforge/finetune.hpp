#pragma once

#include <algorithm>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lexforge/checkpoint.hpp"
#include "lexforge/hier.hpp"
#include "lexforge/metrics.hpp"
#include "lexforge/taskdata.hpp"
#include "lexforge/wordpiece.hpp"

namespace lexforge {

struct FinetuneConfig {
    int max_epochs = 25;
    int patience = 5;  // epochs without a dev macro-F1 improvement
    int batch_size = 4;
    double lr_encoder = 1e-5;  // lowest encoder layers
    double lr_upper = 1e-3;    // recurrent/attention upper encoder and heads
    double lr_head = 1e-3;
    AdamWConfig adamw;
    HierConfig hier;
    double threshold = 0.5;  // sigmoid decision threshold
    std::uint64_t seed = 1;
};

// ---------------------------------------------------------------------------
// Example -> HierDocument preparation

namespace finetune_detail {

inline std::vector<std::int32_t> wrap_segment(const std::vector<int>& ids, int segment_len) {
    const int body = std::min<int>(static_cast<int>(ids.size()), segment_len - 2);
    std::vector<std::int32_t> out;
    out.reserve(static_cast<std::size_t>(body) + 2);
    out.push_back(kClsId);
    for (int i = 0; i < body; ++i) out.push_back(ids[static_cast<std::size_t>(i)]);
    out.push_back(kSepId);
    return out;
}

// Sentence list -> segments, first max_segments kept, each truncated to the
// segment token budget.
inline HierDocument sentences_to_segments(const std::vector<std::string>& sentences,
                                          const Vocabulary& vocab, const HierConfig& config) {
    HierDocument doc;
    for (const auto& sentence : sentences) {
        if (static_cast<int>(doc.size()) >= config.max_segments) break;
        doc.push_back(wrap_segment(encode(sentence, vocab).ids, config.segment_len));
    }
    if (doc.empty()) doc.push_back({kClsId, kSepId});
    return doc;
}

// Running text -> contiguous token chunks; selection picks the head or tail
// of the chunk sequence when there are more than max_segments.
inline HierDocument text_to_segments(const std::string& text, const Vocabulary& vocab,
                                     const HierConfig& config) {
    const auto tokens = encode(text, vocab);
    const int body = config.segment_len - 2;
    HierDocument all;
    for (std::size_t begin = 0; begin < tokens.ids.size();
         begin += static_cast<std::size_t>(body)) {
        const std::size_t end = std::min(tokens.ids.size(), begin + static_cast<std::size_t>(body));
        std::vector<std::int32_t> segment{kClsId};
        for (std::size_t i = begin; i < end; ++i) segment.push_back(tokens.ids[i]);
        segment.push_back(kSepId);
        all.push_back(std::move(segment));
    }
    if (all.empty()) all.push_back({kClsId, kSepId});
    if (static_cast<int>(all.size()) <= config.max_segments) return all;
    HierDocument window;
    if (config.selection == SegmentSelection::last_k) {
        window.assign(all.end() - config.max_segments, all.end());
    } else {
        window.assign(all.begin(), all.begin() + config.max_segments);
    }
    return window;
}

}  // namespace finetune_detail

inline LabeledDoc prepare_lsi_doc(const LsiExample& example, const Vocabulary& vocab,
                                  const HierConfig& config, int label_count) {
    LabeledDoc doc;
    doc.segments = finetune_detail::sentences_to_segments(example.sentences, vocab, config);
    doc.multilabels.assign(static_cast<std::size_t>(label_count), 0);
    for (int l : example.labels) {
        check(l >= 0 && l < label_count, "lsi example label out of range");
        doc.multilabels[static_cast<std::size_t>(l)] = 1;
    }
    return doc;
}

inline LabeledDoc prepare_seg_doc(const SegExample& example, const Vocabulary& vocab,
                                  const HierConfig& config) {
    LabeledDoc doc;
    doc.segments = finetune_detail::sentences_to_segments(example.sentences, vocab, config);
    doc.roles.assign(example.roles.begin(),
                     example.roles.begin() + static_cast<std::ptrdiff_t>(doc.segments.size()));
    return doc;
}

inline LabeledDoc prepare_cjpe_doc(const CjpeExample& example, const Vocabulary& vocab,
                                   const HierConfig& config) {
    LabeledDoc doc;
    doc.segments = finetune_detail::text_to_segments(example.text, vocab, config);
    doc.binary_label = example.label;
    return doc;
}

// ---------------------------------------------------------------------------
// Prediction + metrics

template <class S>
MetricsReport evaluate_docs(HierModel<S>& model, const std::vector<LabeledDoc>& docs,
                            const std::vector<double>& label_weights, double threshold) {
    if (model.task == TaskKind::lsi) {
        std::vector<std::vector<std::uint8_t>> gold, predicted;
        for (const auto& doc : docs) {
            auto result = doc_loss_and_grads(model, doc, label_weights);
            std::vector<std::uint8_t> row(static_cast<std::size_t>(model.labels), 0);
            for (int l = 0; l < model.labels; ++l) {
                row[static_cast<std::size_t>(l)] =
                    result.probabilities[l] >= static_cast<S>(threshold) ? 1 : 0;
            }
            predicted.push_back(std::move(row));
            gold.push_back(doc.multilabels);
        }
        return multilabel_metrics(gold, predicted, model.labels);
    }
    if (model.task == TaskKind::seg) {
        std::vector<int> gold, predicted;
        for (const auto& doc : docs) {
            auto result = doc_loss_and_grads(model, doc, label_weights);
            for (std::size_t s = 0; s < doc.roles.size(); ++s) {
                gold.push_back(doc.roles[s]);
                predicted.push_back(result.decoded[s]);
            }
        }
        return classification_metrics(gold, predicted, model.labels);
    }
    std::vector<int> gold, predicted;
    for (const auto& doc : docs) {
        auto result = doc_loss_and_grads(model, doc, label_weights);
        gold.push_back(doc.binary_label);
        predicted.push_back(result.probabilities[0] >= static_cast<S>(threshold) ? 1 : 0);
    }
    return classification_metrics(gold, predicted, 2);
}

// ---------------------------------------------------------------------------
// Training driver with early stopping on dev macro-F1

struct FinetuneOutcome {
    HierModel<float> model;
    MetricsReport dev;
    MetricsReport test;
    int best_epoch = 0;              // 1-based
    int epochs_run = 0;
    std::vector<double> dev_history;  // macro-F1 per epoch
    std::vector<double> loss_history;
};

// label_weights: inverse-frequency weights for lsi, {1} otherwise.
inline std::vector<double> task_label_weights(TaskKind task,
                                              const std::vector<LabeledDoc>& train,
                                              int label_count) {
    if (task != TaskKind::lsi) {
        return std::vector<double>(1, 1.0);
    }
    std::vector<std::int64_t> counts(static_cast<std::size_t>(label_count), 0);
    for (const auto& doc : train) {
        for (int l = 0; l < label_count; ++l) {
            counts[static_cast<std::size_t>(l)] += doc.multilabels[static_cast<std::size_t>(l)];
        }
    }
    return label_weights_from_counts(counts);
}

inline FinetuneOutcome run_finetune(TaskKind task, const std::vector<LabeledDoc>& train,
                                    const std::vector<LabeledDoc>& dev,
                                    const std::vector<LabeledDoc>& test, int label_count,
                                    Parameters<float> pretrained, const EncoderConfig& enc_config,
                                    const FinetuneConfig& config) {
    check(!train.empty() && !dev.empty() && !test.empty(),
          "run_finetune: every split must be non-empty");
    FinetuneOutcome outcome;
    outcome.model = HierModel<float>::create(task, label_count, enc_config, config.hier,
                                             std::move(pretrained), config.seed);
    const auto weights = task_label_weights(task, train, label_count);
    auto opt = OptimizerState<float>::init(outcome.model.trainable_tensors());
    const std::map<std::string, double> lr_map{{"encoder", config.lr_encoder},
                                               {"upper", config.lr_upper},
                                               {"head", config.lr_head}};

    HierModel<float> best = outcome.model;
    double best_f1 = -1.0;
    int best_epoch = 0;
    int since_best = 0;

    std::vector<std::size_t> order(train.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
        RngStream rng = RngStream::derive(config.seed, "finetune_epoch",
                                          {static_cast<std::uint64_t>(epoch)});
        rng.shuffle(order);
        double epoch_loss = 0.0;
        int batches = 0;
        for (std::size_t begin = 0; begin < order.size();
             begin += static_cast<std::size_t>(config.batch_size)) {
            const std::size_t end =
                std::min(order.size(), begin + static_cast<std::size_t>(config.batch_size));
            std::vector<LabeledDoc> batch;
            for (std::size_t i = begin; i < end; ++i) batch.push_back(train[order[i]]);
            epoch_loss += static_cast<double>(
                finetune_step(outcome.model, batch, weights, lr_map, opt, config.adamw));
            ++batches;
        }
        outcome.loss_history.push_back(epoch_loss / std::max(1, batches));

        const auto dev_report = evaluate_docs(outcome.model, dev, weights, config.threshold);
        outcome.dev_history.push_back(dev_report.macro.f1);
        outcome.epochs_run = epoch;
        if (dev_report.macro.f1 > best_f1) {
            best_f1 = dev_report.macro.f1;
            best = outcome.model;
            best_epoch = epoch;
            since_best = 0;
        } else {
            ++since_best;
        }
        if (since_best >= config.patience) break;
    }

    outcome.model = best;
    outcome.best_epoch = best_epoch;
    outcome.dev = evaluate_docs(outcome.model, dev, weights, config.threshold);
    outcome.test = evaluate_docs(outcome.model, test, weights, config.threshold);
    return outcome;
}

// ---------------------------------------------------------------------------
// Fine-tuned model files: the pre-training container format plus a head
// section tagged with the task kind.

inline nlohmann::json hier_config_to_json(const HierConfig& config) {
    return {{"max_segments", config.max_segments},
            {"segment_len", config.segment_len},
            {"lstm_hidden", config.lstm_hidden},
            {"attn_dim", config.attn_dim},
            {"selection", config.selection == SegmentSelection::last_k ? "last" : "first"}};
}

inline HierConfig hier_config_from_json(const nlohmann::json& j) {
    HierConfig config;
    config.max_segments = j.at("max_segments").get<int>();
    config.segment_len = j.at("segment_len").get<int>();
    config.lstm_hidden = j.at("lstm_hidden").get<int>();
    config.attn_dim = j.at("attn_dim").get<int>();
    config.selection = j.at("selection").get<std::string>() == "last"
                           ? SegmentSelection::last_k
                           : SegmentSelection::first_k;
    return config;
}

inline Checkpoint make_finetune_checkpoint(HierModel<float>& model) {
    Checkpoint ckpt;
    ckpt.meta["kind"] = "finetune";
    ckpt.meta["task"] = task_name(model.task);
    ckpt.meta["labels"] = model.labels;
    ckpt.meta["config"] = model.enc_config.to_json();
    ckpt.meta["hier"] = hier_config_to_json(model.hier_config);
    pack_tensors(ckpt, model.encoder.tensors());
    pack_tensors(ckpt, model.upper.tensors());
    pack_tensors(ckpt, model.head.tensors("head."));
    if (model.task == TaskKind::seg) pack_tensors(ckpt, model.crf.tensors("head.crf."));
    return ckpt;
}

inline HierModel<float> load_finetune_model(const Checkpoint& ckpt) {
    check(ckpt.meta.value("kind", "") == "finetune",
          "not a fine-tuned model file (kind != finetune)");
    const TaskKind task = task_from_name(ckpt.meta.at("task").get<std::string>());
    const int labels = ckpt.meta.at("labels").get<int>();
    const EncoderConfig enc_config = EncoderConfig::from_json(ckpt.meta.at("config"));
    const HierConfig hier_config = hier_config_from_json(ckpt.meta.at("hier"));
    auto model = HierModel<float>::create(task, labels, enc_config, hier_config,
                                          Parameters<float>::zeros(enc_config), 0);
    unpack_tensors(ckpt, model.encoder.tensors());
    unpack_tensors(ckpt, model.upper.tensors());
    unpack_tensors(ckpt, model.head.tensors("head."));
    if (task == TaskKind::seg) unpack_tensors(ckpt, model.crf.tensors("head.crf."));
    return model;
}

// ---------------------------------------------------------------------------
// k-fold cross-validation

struct CrossValidationResult {
    std::vector<MetricsReport> folds;
    MetricsReport mean;  // macro values averaged across folds
};

inline std::vector<std::vector<std::size_t>> make_folds(std::size_t count, int k,
                                                        std::uint64_t seed) {
    check(count >= static_cast<std::size_t>(k),
          "cross_validate: need at least k examples, have " + std::to_string(count));
    std::vector<std::size_t> order(count);
    for (std::size_t i = 0; i < count; ++i) order[i] = i;
    RngStream rng = RngStream::derive(seed, "cv_folds");
    rng.shuffle(order);
    std::vector<std::vector<std::size_t>> folds(static_cast<std::size_t>(k));
    for (std::size_t i = 0; i < count; ++i) {
        folds[i % static_cast<std::size_t>(k)].push_back(order[i]);
    }
    return folds;
}

// Each fold serves as the test set once; a tenth of the remaining examples
// (at least one) is carved out as the dev split for early stopping.
inline CrossValidationResult cross_validate(TaskKind task, const std::vector<LabeledDoc>& docs,
                                            int label_count, int k,
                                            const Parameters<float>& pretrained,
                                            const EncoderConfig& enc_config,
                                            const FinetuneConfig& config) {
    auto folds = make_folds(docs.size(), k, config.seed);
    CrossValidationResult result;
    for (std::size_t f = 0; f < folds.size(); ++f) {
        std::vector<LabeledDoc> test, rest;
        std::vector<bool> in_test(docs.size(), false);
        for (std::size_t i : folds[f]) in_test[i] = true;
        for (std::size_t i = 0; i < docs.size(); ++i) {
            (in_test[i] ? test : rest).push_back(docs[i]);
        }
        const std::size_t dev_count = std::max<std::size_t>(1, rest.size() / 10);
        std::vector<LabeledDoc> dev(rest.end() - static_cast<std::ptrdiff_t>(dev_count),
                                    rest.end());
        rest.resize(rest.size() - dev_count);

        FinetuneConfig fold_config = config;
        fold_config.seed = SplitMix64::mix(config.seed ^ (f + 1));
        auto outcome = run_finetune(task, rest, dev, test, label_count, pretrained, enc_config,
                                    fold_config);
        result.folds.push_back(outcome.test);
    }
    for (const auto& fold : result.folds) {
        result.mean.macro.precision += fold.macro.precision / static_cast<double>(k);
        result.mean.macro.recall += fold.macro.recall / static_cast<double>(k);
        result.mean.macro.f1 += fold.macro.f1 / static_cast<double>(k);
    }
    return result;
}

}  // namespace lexforge
