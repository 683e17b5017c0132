#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "lexforge/adamw.hpp"
#include "lexforge/checkpoint.hpp"
#include "lexforge/encoder.hpp"
#include "lexforge/masking.hpp"

namespace lexforge {

struct PretrainConfig {
    int steps = 100;
    int batch_size = 8;
    int chunk_len = 254;
    MaskingConfig masking;
    AdamWConfig optimizer;
    int checkpoint_interval = 0;  // 0: every max(1, steps / 10)
    int workers = 1;
    bool train_dropout = true;  // honor EncoderConfig.dropout during training
};

struct StepMetrics {
    int step = 0;
    double mlm_loss = 0.0;
    double nsp_loss = 0.0;
};

struct PretrainState {
    Parameters<float> params;
    OptimizerState<float> opt;
    std::int64_t step = 0;
};

struct PretrainResult {
    PretrainState state;
    std::vector<StepMetrics> history;
};

struct PretrainSinks {
    std::function<void(const StepMetrics&)> on_step;
    std::function<void(const PretrainState&, bool is_final)> on_checkpoint;
};

namespace pretrain_detail {

// One (document, anchor) entry per epoch; anchors run over [0, n_chunks - 2]
// so every chunk heads one example and the positive partner always exists.
inline std::vector<std::pair<int, int>> anchor_plan(const std::vector<ChunkedDoc>& docs) {
    std::vector<std::pair<int, int>> plan;
    for (std::size_t d = 0; d < docs.size(); ++d) {
        const int n = static_cast<int>(docs[d].size());
        for (int i = 0; i + 1 < n; ++i) plan.emplace_back(static_cast<int>(d), i);
    }
    return plan;
}

inline std::vector<SequencePair> pairs_for_batch(const std::vector<ChunkedDoc>& docs,
                                                 const std::vector<std::pair<int, int>>& order,
                                                 std::size_t begin, std::size_t end,
                                                 std::uint64_t seed, std::uint64_t epoch) {
    std::vector<SequencePair> pairs;
    pairs.reserve(end - begin);
    for (std::size_t i = begin; i < end; ++i) {
        const auto [doc, anchor] = order[i];
        RngStream rng = RngStream::derive(seed, "nsp", {epoch, static_cast<std::uint64_t>(i)});
        auto pair = sample_pair(docs[static_cast<std::size_t>(doc)], anchor, rng);
        check(pair.has_value(), "pretrain: anchor plan contains a single-chunk document");
        pairs.push_back(std::move(*pair));
    }
    return pairs;
}

}  // namespace pretrain_detail

inline Checkpoint make_pretrain_checkpoint(const EncoderConfig& config, PretrainState& state,
                                           std::uint64_t master_seed) {
    Checkpoint ckpt;
    ckpt.meta["kind"] = "pretrain";
    ckpt.meta["config"] = config.to_json();
    ckpt.meta["step"] = state.step;
    ckpt.meta["master_seed"] = master_seed;
    auto refs = state.params.tensors();
    pack_tensors(ckpt, refs);
    pack_optimizer(ckpt, state.opt, refs);
    return ckpt;
}

inline PretrainState load_pretrain_state(const Checkpoint& ckpt, EncoderConfig& config_out) {
    config_out = EncoderConfig::from_json(ckpt.meta.at("config"));
    PretrainState state;
    state.params = Parameters<float>::zeros(config_out);
    state.step = ckpt.meta.at("step").get<std::int64_t>();
    auto refs = state.params.tensors();
    unpack_tensors(ckpt, refs);
    state.opt = OptimizerState<float>::init(refs);
    unpack_optimizer(ckpt, state.opt, refs);
    return state;
}

// MLM + NSP training loop: build_batch -> loss_and_grads -> adamw_step.
// Every random choice derives from (master_seed, stage label, epoch, index),
// so a resumed run reproduces an uninterrupted one bit for bit.
inline PretrainResult pretrain(const std::vector<ChunkedDoc>& train_docs, const Vocabulary& vocab,
                               const EncoderConfig& enc_config, const PretrainConfig& config,
                               std::uint64_t master_seed,
                               const PretrainState* resume = nullptr,
                               const PretrainSinks* sinks = nullptr) {
    check(!train_docs.empty(), "pretrain: empty corpus");
    enc_config.validate();
    const auto plan = pretrain_detail::anchor_plan(train_docs);
    check(!plan.empty(), "pretrain: corpus yields no sequence pairs (every document "
                         "needs at least two chunks)");

    PretrainResult result;
    if (resume != nullptr) {
        result.state = *resume;
    } else {
        result.state.params = Parameters<float>::init(enc_config, master_seed);
        result.state.opt = OptimizerState<float>::init(result.state.params.tensors());
        result.state.step = 0;
    }

    const int interval = config.checkpoint_interval > 0 ? config.checkpoint_interval
                                                        : std::max(1, config.steps / 10);
    const std::size_t steps_per_epoch =
        (plan.size() + static_cast<std::size_t>(config.batch_size) - 1) /
        static_cast<std::size_t>(config.batch_size);

    if (sinks != nullptr && sinks->on_checkpoint && result.state.step == 0) {
        sinks->on_checkpoint(result.state, config.steps == 0);
    }

    std::vector<std::pair<int, int>> order;
    std::uint64_t order_epoch = UINT64_MAX;
    auto params_refs = result.state.params.tensors();

    while (result.state.step < config.steps) {
        const auto step = static_cast<std::uint64_t>(result.state.step);
        const std::uint64_t epoch = step / steps_per_epoch;
        const std::size_t slot = static_cast<std::size_t>(step % steps_per_epoch);
        if (epoch != order_epoch) {
            order = plan;
            RngStream shuffle_rng = RngStream::derive(master_seed, "epoch_order", {epoch});
            shuffle_rng.shuffle(order);
            order_epoch = epoch;
        }
        const std::size_t begin = slot * static_cast<std::size_t>(config.batch_size);
        const std::size_t end = std::min(plan.size(), begin + static_cast<std::size_t>(config.batch_size));
        auto pairs = pretrain_detail::pairs_for_batch(train_docs, order, begin, end, master_seed,
                                                      epoch);
        MaskedBatch batch = build_batch(pairs, vocab, config.masking,
                                        {master_seed, epoch, static_cast<std::uint64_t>(begin)});

        const bool use_dropout = config.train_dropout && enc_config.dropout > 0.0;
        RngStream dropout_rng = RngStream::derive(master_seed, "dropout", {step});
        auto loss = loss_and_grads(batch, result.state.params, enc_config, use_dropout,
                                   use_dropout ? &dropout_rng : nullptr, config.workers);
        if (!std::isfinite(loss.total())) {
            fail("pretrain: loss diverged to a non-finite value at step " +
                 std::to_string(result.state.step) + "; last good checkpoint retained");
        }
        auto grad_refs = loss.grads.tensors();
        adamw_step(params_refs, grad_refs, result.state.opt, config.optimizer);
        result.state.step += 1;

        StepMetrics metrics{static_cast<int>(result.state.step),
                            static_cast<double>(loss.mlm_loss),
                            static_cast<double>(loss.nsp_loss)};
        result.history.push_back(metrics);
        if (sinks != nullptr && sinks->on_step) sinks->on_step(metrics);
        const bool is_final = result.state.step >= config.steps;
        if (sinks != nullptr && sinks->on_checkpoint &&
            (is_final || result.state.step % interval == 0)) {
            sinks->on_checkpoint(result.state, is_final);
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// Perplexity

// Deterministic evaluation batches: the same anchors, pairing and masks for a
// given evaluation seed, so scores are comparable across checkpoints.
inline std::vector<MaskedBatch> build_eval_batches(const std::vector<ChunkedDoc>& test_docs,
                                                   const Vocabulary& vocab,
                                                   const MaskingConfig& masking,
                                                   std::uint64_t eval_seed, int batch_size) {
    const auto plan = pretrain_detail::anchor_plan(test_docs);
    check(!plan.empty(), "perplexity: test split yields no sequence pairs");
    std::vector<MaskedBatch> batches;
    for (std::size_t begin = 0; begin < plan.size();
         begin += static_cast<std::size_t>(batch_size)) {
        const std::size_t end =
            std::min(plan.size(), begin + static_cast<std::size_t>(batch_size));
        auto pairs =
            pretrain_detail::pairs_for_batch(test_docs, plan, begin, end, eval_seed, 0);
        batches.push_back(build_batch(pairs, vocab, masking,
                                      {eval_seed, 0, static_cast<std::uint64_t>(begin)}));
    }
    return batches;
}

// e^(mean NLL of the true token at masked positions). The logits callback
// maps (batch, row, masked positions) to a [positions, vocab] logit matrix,
// which lets tests substitute oracle models for the encoder path.
template <class LogitsFn>
double perplexity_with_logits(const std::vector<MaskedBatch>& batches, LogitsFn&& logits_at,
                              std::int64_t* positions_out = nullptr) {
    double total_nll = 0.0;
    std::int64_t count = 0;
    for (const auto& batch : batches) {
        for (int r = 0; r < batch.rows; ++r) {
            std::vector<Eigen::Index> positions;
            const std::size_t base =
                static_cast<std::size_t>(r) * static_cast<std::size_t>(batch.cols);
            for (int c = 0; c < batch.cols; ++c) {
                if (batch.mlm_labels[base + static_cast<std::size_t>(c)] != kIgnoreLabel) {
                    positions.push_back(c);
                }
            }
            if (positions.empty()) continue;
            Mat<double> logits = logits_at(batch, r, positions);
            for (std::size_t i = 0; i < positions.size(); ++i) {
                const int label =
                    batch.mlm_labels[base + static_cast<std::size_t>(positions[i])];
                auto row = logits.row(static_cast<Eigen::Index>(i));
                const double peak = row.maxCoeff();
                const double lse = peak + std::log((row.array() - peak).exp().sum());
                total_nll += lse - row[label];
                ++count;
            }
        }
    }
    check(count > 0, "perplexity: no masked positions in the evaluation set");
    if (positions_out != nullptr) *positions_out = count;
    return std::exp(total_nll / static_cast<double>(count));
}

template <class S>
double evaluate_perplexity(const Parameters<S>& params, const EncoderConfig& config,
                           const std::vector<ChunkedDoc>& test_docs, const Vocabulary& vocab,
                           std::uint64_t eval_seed, const MaskingConfig& masking,
                           int batch_size = 8) {
    auto batches = build_eval_batches(test_docs, vocab, masking, eval_seed, batch_size);
    return perplexity_with_logits(
        batches, [&](const MaskedBatch& batch, int row,
                     const std::vector<Eigen::Index>& positions) -> Mat<double> {
            const std::size_t base =
                static_cast<std::size_t>(row) * static_cast<std::size_t>(batch.cols);
            const std::size_t width = static_cast<std::size_t>(batch.cols);
            auto cache = encoder_forward_row<S>({batch.input_ids.data() + base, width},
                                                {batch.segment_ids.data() + base, width},
                                                {batch.attention_mask.data() + base, width},
                                                params, config);
            const Mat<S>& hidden = cache.hidden();
            Mat<S> h(static_cast<Eigen::Index>(positions.size()), config.hidden);
            for (std::size_t i = 0; i < positions.size(); ++i) {
                h.row(static_cast<Eigen::Index>(i)) = hidden.row(positions[i]);
            }
            Mat<S> logits = (h * params.mlm_w).rowwise() + params.mlm_b.transpose();
            return logits.template cast<double>();
        });
}

}  // namespace lexforge
