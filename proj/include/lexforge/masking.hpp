#pragma once

#include <algorithm>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "lexforge/chunks.hpp"
#include "lexforge/rng.hpp"
#include "lexforge/wordpiece.hpp"

namespace lexforge {

// (C_i, C_j) drawn from one document: consecutive (positive) or any
// non-consecutive chunk of the same document (negative), 1:1 on average.
struct SequencePair {
    Chunk first;
    Chunk second;
    bool is_next = false;
};

// nullopt when the anchor cannot form a pair (single-chunk document).
inline std::optional<SequencePair> sample_pair(const ChunkedDoc& chunks, int anchor,
                                               RngStream& rng) {
    const int n = static_cast<int>(chunks.size());
    check(anchor >= 0 && anchor < n, "sample_pair: anchor out of range");
    if (n < 2) return std::nullopt;

    const bool positive_possible = anchor + 1 < n;
    const bool negative_possible = n > (positive_possible ? 2 : 1);
    bool positive;
    if (!positive_possible) {
        positive = false;
    } else if (!negative_possible) {
        positive = true;
    } else {
        positive = rng.next_bool();
    }

    SequencePair pair;
    pair.first = chunks[static_cast<std::size_t>(anchor)];
    pair.is_next = positive;
    if (positive) {
        pair.second = chunks[static_cast<std::size_t>(anchor) + 1];
    } else {
        // uniform over indices j with j != anchor and j != anchor + 1
        std::vector<int> candidates;
        candidates.reserve(static_cast<std::size_t>(n));
        for (int j = 0; j < n; ++j) {
            if (j == anchor || j == anchor + 1) continue;
            candidates.push_back(j);
        }
        const std::size_t pick = static_cast<std::size_t>(rng.next_below(candidates.size()));
        pair.second = chunks[static_cast<std::size_t>(candidates[pick])];
    }
    return pair;
}

// One [CLS] first [SEP] second [SEP] row with dynamic whole-word masking
// applied. mlm_labels holds the original id at masked positions and kIgnore
// everywhere else.
struct MaskedRow {
    std::vector<std::int32_t> input_ids;
    std::vector<std::int32_t> segment_ids;
    std::vector<std::int32_t> mlm_labels;
    bool is_next = false;
};

constexpr std::int32_t kIgnoreLabel = -1;

struct MaskingConfig {
    double mask_rate = 0.15;
    double mask_action = 0.80;     // replace with [MASK]
    double keep_action = 0.10;     // leave unchanged
    int pad_to_limit = 512;        // hard cap on row length
};

inline MaskedRow apply_masking(const SequencePair& pair, const Vocabulary& vocab,
                               const MaskingConfig& config, RngStream& rng) {
    MaskedRow row;
    row.is_next = pair.is_next;
    const std::size_t total = pair.first.ids.size() + pair.second.ids.size() + 3;
    check(total <= static_cast<std::size_t>(config.pad_to_limit),
          "apply_masking: pair of length " + std::to_string(total) + " exceeds the limit of " +
              std::to_string(config.pad_to_limit));

    row.input_ids.reserve(total);
    row.segment_ids.reserve(total);
    row.input_ids.push_back(kClsId);
    row.segment_ids.push_back(0);
    for (int id : pair.first.ids) {
        row.input_ids.push_back(id);
        row.segment_ids.push_back(0);
    }
    row.input_ids.push_back(kSepId);
    row.segment_ids.push_back(0);
    const std::size_t second_begin = row.input_ids.size();
    for (int id : pair.second.ids) {
        row.input_ids.push_back(id);
        row.segment_ids.push_back(1);
    }
    row.input_ids.push_back(kSepId);
    row.segment_ids.push_back(1);
    row.mlm_labels.assign(row.input_ids.size(), kIgnoreLabel);

    // group positions into whole words; a chunk that begins mid-word starts
    // its own group since the earlier pieces are not in this sequence
    std::vector<std::vector<std::size_t>> words;
    auto collect = [&](const Chunk& chunk, std::size_t base) {
        for (std::size_t i = 0; i < chunk.ids.size(); ++i) {
            if (i == 0 || chunk.word_start[i]) words.emplace_back();
            words.back().push_back(base + i);
        }
    };
    collect(pair.first, 1);
    collect(pair.second, second_begin);

    const std::size_t maskable = pair.first.ids.size() + pair.second.ids.size();
    const double target = config.mask_rate * static_cast<double>(maskable);

    std::vector<std::size_t> order(words.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    rng.shuffle(order);

    std::vector<std::size_t> candidates;
    double covered = 0.0;
    for (std::size_t w : order) {
        if (covered >= target) break;
        for (std::size_t pos : words[w]) candidates.push_back(pos);
        covered += static_cast<double>(words[w].size());
    }
    std::sort(candidates.begin(), candidates.end());

    const int n_random = vocab.size() - 5;
    for (std::size_t pos : candidates) {
        row.mlm_labels[pos] = row.input_ids[pos];
        const double u = rng.next_double();
        if (u < config.mask_action) {
            row.input_ids[pos] = kMaskId;
        } else if (u < config.mask_action + config.keep_action) {
            // unchanged
        } else {
            row.input_ids[pos] =
                5 + static_cast<std::int32_t>(rng.next_below(static_cast<std::uint64_t>(n_random)));
        }
    }
    return row;
}

// A padded batch. Masking is applied here, at batch-build time, so the same
// pair receives fresh masks whenever the epoch seed changes.
struct MaskedBatch {
    int rows = 0;
    int cols = 0;
    std::vector<std::int32_t> input_ids;       // rows x cols, row-major
    std::vector<std::int32_t> segment_ids;
    std::vector<std::int32_t> attention_mask;  // 1 = real token, 0 = padding
    std::vector<std::int32_t> mlm_labels;
    std::vector<std::uint8_t> nsp_labels;      // 1 = is_next

    std::span<const std::int32_t> row_input(int r) const {
        return {input_ids.data() + static_cast<std::size_t>(r) * static_cast<std::size_t>(cols),
                static_cast<std::size_t>(cols)};
    }
};

// Identifies the deterministic mask stream for one batch: every row's stream
// is derive(master_seed, "mask", {epoch, base_index + row}), so results do
// not depend on how rows are distributed over workers.
struct MaskSeed {
    std::uint64_t master_seed = 0;
    std::uint64_t epoch = 0;
    std::uint64_t base_index = 0;
};

inline MaskedBatch build_batch(std::span<const SequencePair> pairs, const Vocabulary& vocab,
                               const MaskingConfig& config, const MaskSeed& seed) {
    check(!pairs.empty(), "build_batch: no pairs");
    std::vector<MaskedRow> masked;
    masked.reserve(pairs.size());
    std::size_t width = 0;
    for (std::size_t r = 0; r < pairs.size(); ++r) {
        RngStream rng =
            RngStream::derive(seed.master_seed, "mask", {seed.epoch, seed.base_index + r});
        masked.push_back(apply_masking(pairs[r], vocab, config, rng));
        width = std::max(width, masked.back().input_ids.size());
    }

    MaskedBatch batch;
    batch.rows = static_cast<int>(pairs.size());
    batch.cols = static_cast<int>(width);
    const std::size_t cells = static_cast<std::size_t>(batch.rows) * width;
    batch.input_ids.assign(cells, kPadId);
    batch.segment_ids.assign(cells, 0);
    batch.attention_mask.assign(cells, 0);
    batch.mlm_labels.assign(cells, kIgnoreLabel);
    batch.nsp_labels.resize(pairs.size());
    for (std::size_t r = 0; r < masked.size(); ++r) {
        const auto& row = masked[r];
        const std::size_t base = r * width;
        for (std::size_t i = 0; i < row.input_ids.size(); ++i) {
            batch.input_ids[base + i] = row.input_ids[i];
            batch.segment_ids[base + i] = row.segment_ids[i];
            batch.attention_mask[base + i] = 1;
            batch.mlm_labels[base + i] = row.mlm_labels[i];
        }
        batch.nsp_labels[r] = row.is_next ? 1 : 0;
    }
    return batch;
}

}  // namespace lexforge
