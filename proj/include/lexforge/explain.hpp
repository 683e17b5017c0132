#pragma once

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <set>
#include <string>
#include <vector>

#include "lexforge/hier.hpp"
#include "lexforge/jsonl.hpp"
#include "lexforge/tensor.hpp"
#include "lexforge/wordpiece.hpp"

namespace lexforge {

// Character-level spans one expert marked as decisive for one document.
struct ExpertAnnotation {
    std::string doc_id;
    std::string expert_id;
    std::vector<std::pair<int, int>> spans;  // half-open [begin, end)
};

inline std::vector<ExpertAnnotation> load_annotations(const std::string& path) {
    std::vector<ExpertAnnotation> annotations;
    for_each_jsonl_record(path, [&](int line_no, const json& record) {
        const std::string at = path + " line " + std::to_string(line_no);
        check(record.contains("doc_id") && record["doc_id"].is_string(),
              at + ": missing string \"doc_id\"");
        check(record.contains("expert_id") && record["expert_id"].is_string(),
              at + ": missing string \"expert_id\"");
        check(record.contains("spans") && record["spans"].is_array(),
              at + ": missing array \"spans\"");
        ExpertAnnotation ann;
        ann.doc_id = record["doc_id"].get<std::string>();
        ann.expert_id = record["expert_id"].get<std::string>();
        for (const auto& span : record["spans"]) {
            check(span.is_array() && span.size() == 2, at + ": spans must be [begin, end] pairs");
            ann.spans.emplace_back(span[0].get<int>(), span[1].get<int>());
        }
        annotations.push_back(std::move(ann));
    });
    return annotations;
}

// Merge overlapping or touching spans into canonical non-overlapping form.
inline std::vector<std::pair<int, int>> merge_spans(std::vector<std::pair<int, int>> spans) {
    std::sort(spans.begin(), spans.end());
    std::vector<std::pair<int, int>> merged;
    for (const auto& span : spans) {
        if (!merged.empty() && span.first <= merged.back().second) {
            merged.back().second = std::max(merged.back().second, span.second);
        } else {
            merged.push_back(span);
        }
    }
    return merged;
}

// A token is relevant iff its character interval intersects any annotated
// span.
inline std::vector<std::uint8_t> map_spans_to_tokens(std::string_view text,
                                                     const std::vector<std::pair<int, int>>& spans,
                                                     const TokenizedText& tokenized) {
    for (const auto& [begin, end] : spans) {
        check(begin >= 0 && begin < end && end <= static_cast<int>(text.size()),
              "annotation span [" + std::to_string(begin) + ", " + std::to_string(end) +
                  ") is outside the document of length " + std::to_string(text.size()));
    }
    const auto merged = merge_spans(spans);
    std::vector<std::uint8_t> flags(tokenized.size(), 0);
    for (std::size_t i = 0; i < tokenized.size(); ++i) {
        const auto [tok_begin, tok_end] = tokenized.offsets[i];
        for (const auto& [begin, end] : merged) {
            if (tok_begin < end && begin < tok_end) {
                flags[i] = 1;
                break;
            }
        }
    }
    return flags;
}

// Token-index layout of a chunked document plus the window of chunks the
// model actually sees.
struct ChunkLayout {
    std::vector<std::pair<int, int>> boundaries;  // token ranges, all chunks
    int window_begin = 0;                          // first chunk inside the window
    int window_count = 0;

    int chunk_count() const { return static_cast<int>(boundaries.size()); }
};

inline ChunkLayout chunk_layout(int token_count, int chunk_tokens, int max_chunks,
                                SegmentSelection selection) {
    check(chunk_tokens >= 1, "chunk_layout: chunk size must be positive");
    ChunkLayout layout;
    for (int begin = 0; begin < token_count; begin += chunk_tokens) {
        layout.boundaries.emplace_back(begin, std::min(token_count, begin + chunk_tokens));
    }
    if (layout.boundaries.empty()) layout.boundaries.emplace_back(0, 0);
    const int total = layout.chunk_count();
    layout.window_count = std::min(total, max_chunks);
    layout.window_begin =
        selection == SegmentSelection::last_k ? total - layout.window_count : 0;
    return layout;
}

// q_i: annotated tokens inside window chunk i over all annotated tokens in
// the window. Annotated tokens outside the window are dropped; a window with
// none at all is an error the caller may turn into an exclusion.
inline Vec<double> chunk_importance(const std::vector<std::uint8_t>& relevance,
                                    const ChunkLayout& layout, const std::string& doc_id) {
    Vec<double> counts = Vec<double>::Zero(layout.window_count);
    for (int w = 0; w < layout.window_count; ++w) {
        const auto [begin, end] = layout.boundaries[static_cast<std::size_t>(layout.window_begin + w)];
        for (int t = begin; t < end && t < static_cast<int>(relevance.size()); ++t) {
            counts[w] += relevance[static_cast<std::size_t>(t)] ? 1.0 : 0.0;
        }
    }
    const double total = counts.sum();
    check(total > 0.0, "document \"" + doc_id +
                           "\" has no annotated tokens inside the model's chunk window");
    return counts / total;
}

// KL(q || p) with 0 ln 0 = 0; p must be strictly positive (softmax output).
inline double kl_divergence(const Vec<double>& q, const Vec<double>& p) {
    check(q.size() == p.size(), "kl_divergence: length mismatch (" + std::to_string(q.size()) +
                                    " vs " + std::to_string(p.size()) + ")");
    double kl = 0.0;
    for (Eigen::Index i = 0; i < q.size(); ++i) {
        check(p[i] > 0.0, "kl_divergence: model attention has a zero entry at index " +
                              std::to_string(i));
        if (q[i] > 0.0) kl += q[i] * std::log(q[i] / p[i]);
    }
    return kl;
}

// ---------------------------------------------------------------------------
// Agreement report: KL per (expert, model, document), averaged per expert

struct AgreementEntry {
    std::string model;
    std::string expert;
    std::string doc_id;
    double kl = 0.0;
};

struct AgreementReport {
    std::vector<std::string> models;   // row order
    std::vector<std::string> experts;  // column order
    Mat<double> expert_means;          // [models, experts]
    Vec<double> model_average;         // mean across experts
    std::vector<AgreementEntry> entries;
    std::vector<std::string> excluded;  // "doc:expert" pairs outside the window

    json to_json() const {
        json rows = json::object();
        for (std::size_t m = 0; m < models.size(); ++m) {
            json row = json::object();
            for (std::size_t e = 0; e < experts.size(); ++e) {
                row[experts[e]] = expert_means(static_cast<Eigen::Index>(m),
                                               static_cast<Eigen::Index>(e));
            }
            row["average"] = model_average[static_cast<Eigen::Index>(m)];
            rows[models[m]] = row;
        }
        json per_doc = json::array();
        for (const auto& entry : entries) {
            per_doc.push_back({{"model", entry.model},
                               {"expert", entry.expert},
                               {"doc_id", entry.doc_id},
                               {"kl", entry.kl}});
        }
        return {{"kl_means", rows}, {"per_document", per_doc}, {"excluded", excluded}};
    }

    // Aligned table with values scaled by 100, the usual presentation.
    std::string to_table() const {
        std::string out = "KL divergence vs expert annotations (x100, lower is better)\n";
        char buffer[64];
        std::snprintf(buffer, sizeof(buffer), "%-16s", "model");
        out += buffer;
        for (const auto& expert : experts) {
            std::snprintf(buffer, sizeof(buffer), "%10s", expert.c_str());
            out += buffer;
        }
        std::snprintf(buffer, sizeof(buffer), "%10s", "average");
        out += buffer;
        out += "\n";
        for (std::size_t m = 0; m < models.size(); ++m) {
            std::snprintf(buffer, sizeof(buffer), "%-16s", models[m].c_str());
            out += buffer;
            for (std::size_t e = 0; e < experts.size(); ++e) {
                std::snprintf(buffer, sizeof(buffer), "%10.1f",
                              100.0 * expert_means(static_cast<Eigen::Index>(m),
                                                   static_cast<Eigen::Index>(e)));
                out += buffer;
            }
            std::snprintf(buffer, sizeof(buffer), "%10.1f",
                          100.0 * model_average[static_cast<Eigen::Index>(m)]);
            out += buffer;
            out += "\n";
        }
        return out;
    }
};

// model name -> (doc id -> attention over window chunks)
using ModelAttention = std::map<std::string, std::map<std::string, std::vector<double>>>;

inline AgreementReport agreement_report(const ModelAttention& model_attention,
                                        const std::vector<ExpertAnnotation>& annotations,
                                        const std::map<std::string, std::string>& doc_texts,
                                        const Vocabulary& vocab, int chunk_tokens, int max_chunks,
                                        SegmentSelection selection) {
    check(!model_attention.empty(), "agreement_report: no model attention provided");
    check(!annotations.empty(), "agreement_report: no annotations provided");

    // every annotated document must have text and attention from every model
    std::set<std::string> doc_ids;
    for (const auto& ann : annotations) doc_ids.insert(ann.doc_id);
    std::string missing;
    for (const auto& id : doc_ids) {
        if (doc_texts.find(id) == doc_texts.end()) missing += " " + id + "(text)";
        for (const auto& [model, docs] : model_attention) {
            if (docs.find(id) == docs.end()) missing += " " + id + "(" + model + ")";
        }
    }
    check(missing.empty(), "agreement_report: missing documents:" + missing);

    // tokenize each document once, build the relevance maps and layouts
    std::map<std::string, TokenizedText> tokenized;
    std::map<std::string, ChunkLayout> layouts;
    for (const auto& id : doc_ids) {
        tokenized[id] = encode(doc_texts.at(id), vocab);
        layouts[id] = chunk_layout(static_cast<int>(tokenized[id].size()), chunk_tokens,
                                   max_chunks, selection);
    }

    AgreementReport report;
    for (const auto& [model, _] : model_attention) report.models.push_back(model);
    std::set<std::string> expert_set;
    for (const auto& ann : annotations) expert_set.insert(ann.expert_id);
    report.experts.assign(expert_set.begin(), expert_set.end());
    report.expert_means =
        Mat<double>::Zero(static_cast<Eigen::Index>(report.models.size()),
                          static_cast<Eigen::Index>(report.experts.size()));
    Mat<double> counts = report.expert_means;

    for (const auto& ann : annotations) {
        const auto& text = doc_texts.at(ann.doc_id);
        const auto& tokens = tokenized.at(ann.doc_id);
        const auto& layout = layouts.at(ann.doc_id);
        const auto relevance = map_spans_to_tokens(text, ann.spans, tokens);
        Vec<double> q;
        try {
            q = chunk_importance(relevance, layout, ann.doc_id);
        } catch (const Error&) {
            report.excluded.push_back(ann.doc_id + ":" + ann.expert_id);
            continue;
        }
        const auto expert_idx = static_cast<Eigen::Index>(
            std::find(report.experts.begin(), report.experts.end(), ann.expert_id) -
            report.experts.begin());
        for (std::size_t m = 0; m < report.models.size(); ++m) {
            const auto& attention = model_attention.at(report.models[m]).at(ann.doc_id);
            check(static_cast<int>(attention.size()) == layout.window_count,
                  "agreement_report: attention for \"" + ann.doc_id + "\" from model \"" +
                      report.models[m] + "\" has " + std::to_string(attention.size()) +
                      " entries, expected " + std::to_string(layout.window_count));
            Vec<double> p(layout.window_count);
            for (int i = 0; i < layout.window_count; ++i) p[i] = attention[static_cast<std::size_t>(i)];
            const double kl = kl_divergence(q, p);
            report.entries.push_back({report.models[m], ann.expert_id, ann.doc_id, kl});
            report.expert_means(static_cast<Eigen::Index>(m), expert_idx) += kl;
            counts(static_cast<Eigen::Index>(m), expert_idx) += 1.0;
        }
    }

    check(report.expert_means.size() == 0 || counts.maxCoeff() > 0.0,
          "agreement_report: every annotation fell outside the chunk window");
    for (Eigen::Index m = 0; m < report.expert_means.rows(); ++m) {
        for (Eigen::Index e = 0; e < report.expert_means.cols(); ++e) {
            if (counts(m, e) > 0.0) report.expert_means(m, e) /= counts(m, e);
        }
    }
    report.model_average = report.expert_means.rowwise().mean();
    return report;
}

}  // namespace lexforge
