#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "lexforge/adamw.hpp"
#include "lexforge/crf.hpp"
#include "lexforge/encoder.hpp"
#include "lexforge/tensor.hpp"

namespace lexforge {

// ---------------------------------------------------------------------------
// LSTM over a sequence of row vectors

template <class S>
struct LstmParams {
    Mat<S> w_x;  // [in, 4h], gate order [i | f | g | o]
    Mat<S> w_h;  // [h, 4h]
    Vec<S> b;    // [4h]

    static LstmParams zeros(int in_dim, int hidden) {
        LstmParams p;
        p.w_x = Mat<S>::Zero(in_dim, 4 * hidden);
        p.w_h = Mat<S>::Zero(hidden, 4 * hidden);
        p.b = Vec<S>::Zero(4 * hidden);
        return p;
    }

    int hidden() const { return static_cast<int>(w_h.rows()); }

    std::vector<TensorRef<S>> tensors(const std::string& prefix) {
        return {ref(prefix + "w_x", w_x, true), ref(prefix + "w_h", w_h, true),
                ref(prefix + "b", b, false)};
    }
};

template <class S>
struct LstmCache {
    Mat<S> x;           // [n, in]
    Mat<S> i, f, g, o;  // [n, h], post-activation gates
    Mat<S> c;           // [n, h]
    Mat<S> h;           // [n, h]
};

template <class S>
LstmCache<S> lstm_forward(const Mat<S>& x, const LstmParams<S>& params) {
    const Eigen::Index n = x.rows();
    const int hidden = params.hidden();
    LstmCache<S> cache;
    cache.x = x;
    cache.i.resize(n, hidden);
    cache.f.resize(n, hidden);
    cache.g.resize(n, hidden);
    cache.o.resize(n, hidden);
    cache.c.resize(n, hidden);
    cache.h.resize(n, hidden);
    Vec<S> prev_h = Vec<S>::Zero(hidden);
    Vec<S> prev_c = Vec<S>::Zero(hidden);
    for (Eigen::Index t = 0; t < n; ++t) {
        Vec<S> z = (x.row(t) * params.w_x).transpose() + (prev_h.transpose() * params.w_h).transpose() +
                   params.b;
        auto sigmoid = [](S v) { return S(1) / (S(1) + std::exp(-v)); };
        Vec<S> zi = z.segment(0, hidden), zf = z.segment(hidden, hidden),
               zg = z.segment(2 * hidden, hidden), zo = z.segment(3 * hidden, hidden);
        cache.i.row(t) = zi.unaryExpr(sigmoid).transpose();
        cache.f.row(t) = zf.unaryExpr(sigmoid).transpose();
        cache.g.row(t) = zg.array().tanh().matrix().transpose();
        cache.o.row(t) = zo.unaryExpr(sigmoid).transpose();
        Vec<S> c = (cache.f.row(t).transpose().array() * prev_c.array() +
                    cache.i.row(t).transpose().array() * cache.g.row(t).transpose().array())
                       .matrix();
        cache.c.row(t) = c.transpose();
        cache.h.row(t) = (cache.o.row(t).transpose().array() * c.array().tanh()).matrix().transpose();
        prev_h = cache.h.row(t).transpose();
        prev_c = c;
    }
    return cache;
}

// Backpropagation through time; returns d_x and accumulates parameter grads.
template <class S>
Mat<S> lstm_backward(const LstmCache<S>& cache, const Mat<S>& d_h_out,
                     const LstmParams<S>& params, LstmParams<S>& grads) {
    const Eigen::Index n = cache.x.rows();
    const int hidden = params.hidden();
    Mat<S> d_x = Mat<S>::Zero(cache.x.rows(), cache.x.cols());
    Vec<S> d_h_next = Vec<S>::Zero(hidden);
    Vec<S> d_c_next = Vec<S>::Zero(hidden);
    for (Eigen::Index t = n - 1; t >= 0; --t) {
        Vec<S> dh = d_h_out.row(t).transpose() + d_h_next;
        Vec<S> c = cache.c.row(t).transpose();
        Vec<S> tanh_c = c.array().tanh().matrix();
        Vec<S> o = cache.o.row(t).transpose();
        Vec<S> d_o = (dh.array() * tanh_c.array()).matrix();
        Vec<S> d_c =
            (dh.array() * o.array() * (S(1) - tanh_c.array().square())).matrix() + d_c_next;
        Vec<S> i = cache.i.row(t).transpose();
        Vec<S> f = cache.f.row(t).transpose();
        Vec<S> g = cache.g.row(t).transpose();
        Vec<S> prev_c = t > 0 ? Vec<S>(cache.c.row(t - 1).transpose()) : Vec<S>::Zero(hidden);
        Vec<S> d_i = (d_c.array() * g.array()).matrix();
        Vec<S> d_g = (d_c.array() * i.array()).matrix();
        Vec<S> d_f = (d_c.array() * prev_c.array()).matrix();
        d_c_next = (d_c.array() * f.array()).matrix();

        Vec<S> dz(4 * hidden);
        dz.segment(0, hidden) = (d_i.array() * i.array() * (S(1) - i.array())).matrix();
        dz.segment(hidden, hidden) = (d_f.array() * f.array() * (S(1) - f.array())).matrix();
        dz.segment(2 * hidden, hidden) = (d_g.array() * (S(1) - g.array().square())).matrix();
        dz.segment(3 * hidden, hidden) = (d_o.array() * o.array() * (S(1) - o.array())).matrix();

        grads.w_x.noalias() += cache.x.row(t).transpose() * dz.transpose();
        if (t > 0) grads.w_h.noalias() += cache.h.row(t - 1).transpose() * dz.transpose();
        grads.b += dz;
        d_x.row(t) = (params.w_x * dz).transpose();
        d_h_next = params.w_h * dz;
    }
    return d_x;
}

// ---------------------------------------------------------------------------
// Additive attention pooling: u = tanh(H w + b), p = softmax(u v),
// pooled = sum_i p_i H_i.

template <class S>
struct AttnParams {
    Mat<S> w;  // [in, a]
    Vec<S> b;  // [a]
    Vec<S> v;  // [a]

    static AttnParams zeros(int in_dim, int attn_dim) {
        AttnParams p;
        p.w = Mat<S>::Zero(in_dim, attn_dim);
        p.b = Vec<S>::Zero(attn_dim);
        p.v = Vec<S>::Zero(attn_dim);
        return p;
    }

    std::vector<TensorRef<S>> tensors(const std::string& prefix) {
        return {ref(prefix + "w", w, true), ref(prefix + "b", b, false),
                ref(prefix + "v", v, true)};
    }
};

template <class S>
struct AttnCache {
    Mat<S> input;   // H [n, in]
    Mat<S> u;       // tanh scores [n, a]
    Vec<S> scores;  // pre-softmax [n]
    Vec<S> p;       // attention distribution [n]
    Vec<S> pooled;  // [in]
};

template <class S>
AttnCache<S> attn_forward(const Mat<S>& h, const AttnParams<S>& params) {
    AttnCache<S> cache;
    cache.input = h;
    cache.u = ((h * params.w).rowwise() + params.b.transpose()).array().tanh().matrix();
    cache.scores = cache.u * params.v;
    const S peak = cache.scores.maxCoeff();
    cache.p = (cache.scores.array() - peak).exp().matrix();
    cache.p /= cache.p.sum();
    cache.pooled = h.transpose() * cache.p;
    return cache;
}

// Backward from d_pooled (and optionally d_p, the gradient on the attention
// distribution itself); returns d_h.
template <class S>
Mat<S> attn_backward(const AttnCache<S>& cache, const Vec<S>& d_pooled, const Vec<S>* d_p_ext,
                     const AttnParams<S>& params, AttnParams<S>& grads) {
    Mat<S> d_h = cache.p * d_pooled.transpose();  // [n, in]
    Vec<S> d_p = cache.input * d_pooled;
    if (d_p_ext != nullptr) d_p += *d_p_ext;
    // softmax backward
    const S dot = (d_p.array() * cache.p.array()).sum();
    Vec<S> d_scores = (cache.p.array() * (d_p.array() - dot)).matrix();
    Vec<S> dv = cache.u.transpose() * d_scores;
    grads.v += dv;
    Mat<S> d_u = d_scores * params.v.transpose();
    Mat<S> d_z = (d_u.array() * (S(1) - cache.u.array().square())).matrix();
    grads.w.noalias() += cache.input.transpose() * d_z;
    grads.b += d_z.colwise().sum().transpose();
    d_h += d_z * params.w.transpose();
    return d_h;
}

// ---------------------------------------------------------------------------
// Upper encoder: BiLSTM over segment embeddings plus attention pooling

template <class S>
struct UpperParams {
    LstmParams<S> fwd, bwd;
    AttnParams<S> attn;

    static UpperParams zeros(int in_dim, int lstm_hidden, int attn_dim) {
        UpperParams p;
        p.fwd = LstmParams<S>::zeros(in_dim, lstm_hidden);
        p.bwd = LstmParams<S>::zeros(in_dim, lstm_hidden);
        p.attn = AttnParams<S>::zeros(2 * lstm_hidden, attn_dim);
        return p;
    }

    static UpperParams init(int in_dim, int lstm_hidden, int attn_dim, std::uint64_t seed) {
        UpperParams p = zeros(in_dim, lstm_hidden, attn_dim);
        RngStream rng = RngStream::derive(seed, "upper_init");
        auto fill = [&](Mat<S>& m) {
            for (Eigen::Index i = 0; i < m.size(); ++i) {
                m.data()[i] = static_cast<S>(rng.next_truncated_normal(0.02));
            }
        };
        auto fill_vec = [&](Vec<S>& v) {
            for (Eigen::Index i = 0; i < v.size(); ++i) {
                v[i] = static_cast<S>(rng.next_truncated_normal(0.02));
            }
        };
        fill(p.fwd.w_x);
        fill(p.fwd.w_h);
        fill(p.bwd.w_x);
        fill(p.bwd.w_h);
        fill(p.attn.w);
        fill_vec(p.attn.v);
        return p;
    }

    int lstm_hidden() const { return fwd.hidden(); }

    std::vector<TensorRef<S>> tensors() {
        std::vector<TensorRef<S>> refs;
        for (auto& t : fwd.tensors("upper.lstm_fwd.")) refs.push_back(t);
        for (auto& t : bwd.tensors("upper.lstm_bwd.")) refs.push_back(t);
        for (auto& t : attn.tensors("upper.attn.")) refs.push_back(t);
        return refs;
    }
};

enum class SegmentSelection { first_k, last_k };

struct HierConfig {
    int max_segments = 128;
    int segment_len = 128;  // token budget per segment, [CLS]/[SEP] included
    int lstm_hidden = 128;
    int attn_dim = 128;
    SegmentSelection selection = SegmentSelection::first_k;

    void validate() const {
        check(max_segments >= 1 && segment_len >= 3 && lstm_hidden >= 1 && attn_dim >= 1,
              "HierConfig: sizes must be positive (segment_len >= 3)");
    }
};

// Segment token rows of one document, each already wrapped in [CLS] ... [SEP].
using HierDocument = std::vector<std::vector<std::int32_t>>;

template <class S>
struct DocumentEncoding {
    Mat<S> segment_cls;  // [n, d]
    Mat<S> contextual;   // [n, 2 * lstm_hidden]
    Vec<S> pooled;       // [2 * lstm_hidden]
    Vec<S> attention;    // [n], sums to one
};

template <class S>
struct DocumentCache {
    std::vector<EncoderRowCache<S>> segments;
    LstmCache<S> fwd, bwd;
    AttnCache<S> attn;
    DocumentEncoding<S> encoding;
};

// Lower encoder per segment ([CLS] state kept), BiLSTM across segments,
// additive attention pooled into one document embedding.
template <class S>
DocumentCache<S> encode_document(const HierDocument& doc, const Parameters<S>& encoder,
                                 const EncoderConfig& enc_config, const UpperParams<S>& upper,
                                 const HierConfig& hier_config) {
    check(!doc.empty(), "encode_document: document has no segments");
    check(static_cast<int>(doc.size()) <= hier_config.max_segments,
          "encode_document: segment count exceeds max_segments");
    const Eigen::Index n = static_cast<Eigen::Index>(doc.size());
    const int d = enc_config.hidden;

    DocumentCache<S> cache;
    cache.segments.reserve(doc.size());
    cache.encoding.segment_cls.resize(n, d);
    for (Eigen::Index s = 0; s < n; ++s) {
        const auto& ids = doc[static_cast<std::size_t>(s)];
        check(!ids.empty() && static_cast<int>(ids.size()) <= hier_config.segment_len,
              "encode_document: segment length out of range");
        std::vector<std::int32_t> segs(ids.size(), 0);
        std::vector<std::int32_t> mask(ids.size(), 1);
        cache.segments.push_back(
            encoder_forward_row<S>(ids, segs, mask, encoder, enc_config));
        cache.encoding.segment_cls.row(s) = cache.segments.back().hidden().row(0);
    }

    cache.fwd = lstm_forward(cache.encoding.segment_cls, upper.fwd);
    Mat<S> reversed = cache.encoding.segment_cls.colwise().reverse();
    cache.bwd = lstm_forward(reversed, upper.bwd);

    const int h = upper.lstm_hidden();
    cache.encoding.contextual.resize(n, 2 * h);
    cache.encoding.contextual.leftCols(h) = cache.fwd.h;
    cache.encoding.contextual.rightCols(h) = cache.bwd.h.colwise().reverse();

    cache.attn = attn_forward(cache.encoding.contextual, upper.attn);
    cache.encoding.pooled = cache.attn.pooled;
    cache.encoding.attention = cache.attn.p;
    return cache;
}

// Backward through attention, BiLSTM and every segment's lower encoder.
// d_contextual / d_pooled / d_attention may be empty when a head does not
// touch that output.
template <class S>
void document_backward(const DocumentCache<S>& cache, const Parameters<S>& encoder,
                       const EncoderConfig& enc_config, const UpperParams<S>& upper,
                       const Vec<S>& d_pooled, const Mat<S>& d_contextual,
                       const Vec<S>& d_attention, Parameters<S>& encoder_grads,
                       UpperParams<S>& upper_grads) {
    const Eigen::Index n = cache.encoding.segment_cls.rows();
    const int h = upper.lstm_hidden();

    Mat<S> d_ctx = Mat<S>::Zero(n, 2 * h);
    if (d_contextual.size() > 0) d_ctx += d_contextual;
    if (d_pooled.size() > 0 || d_attention.size() > 0) {
        Vec<S> dp = d_pooled.size() > 0 ? d_pooled : Vec<S>::Zero(2 * h);
        const Vec<S>* d_attn_ptr = d_attention.size() > 0 ? &d_attention : nullptr;
        d_ctx += attn_backward(cache.attn, dp, d_attn_ptr, upper.attn, upper_grads.attn);
    }

    Mat<S> d_fwd_h = d_ctx.leftCols(h);
    Mat<S> d_bwd_h = d_ctx.rightCols(h).colwise().reverse();
    Mat<S> d_cls = lstm_backward(cache.fwd, d_fwd_h, upper.fwd, upper_grads.fwd);
    Mat<S> d_cls_rev = lstm_backward(cache.bwd, d_bwd_h, upper.bwd, upper_grads.bwd);
    d_cls += d_cls_rev.colwise().reverse();

    for (Eigen::Index s = 0; s < n; ++s) {
        const auto& seg_cache = cache.segments[static_cast<std::size_t>(s)];
        Mat<S> d_hidden = Mat<S>::Zero(seg_cache.hidden().rows(), seg_cache.hidden().cols());
        d_hidden.row(0) = d_cls.row(s);
        encoder_backward_row(seg_cache, d_hidden, encoder, enc_config, encoder_grads);
    }
}

// ---------------------------------------------------------------------------
// Task heads

template <class S>
struct HeadParams {
    Mat<S> w;  // [in, labels]
    Vec<S> b;  // [labels]

    static HeadParams zeros(int in_dim, int labels) {
        HeadParams p;
        p.w = Mat<S>::Zero(in_dim, labels);
        p.b = Vec<S>::Zero(labels);
        return p;
    }

    static HeadParams init(int in_dim, int labels, std::uint64_t seed) {
        HeadParams p = zeros(in_dim, labels);
        RngStream rng = RngStream::derive(seed, "head_init");
        for (Eigen::Index i = 0; i < p.w.size(); ++i) {
            p.w.data()[i] = static_cast<S>(rng.next_truncated_normal(0.02));
        }
        return p;
    }

    std::vector<TensorRef<S>> tensors(const std::string& prefix) {
        return {ref(prefix + "w", w, true), ref(prefix + "b", b, false)};
    }
};

// w_l proportional to (sum_j n_j) / n_l, rescaled so the mean weight is 1.
inline std::vector<double> label_weights_from_counts(const std::vector<std::int64_t>& counts) {
    check(!counts.empty(), "label weights: empty count vector");
    double total = 0.0;
    for (std::size_t l = 0; l < counts.size(); ++l) {
        check(counts[l] > 0, "label weights: label " + std::to_string(l) + " has zero count");
        total += static_cast<double>(counts[l]);
    }
    std::vector<double> weights(counts.size());
    double mean = 0.0;
    for (std::size_t l = 0; l < counts.size(); ++l) {
        weights[l] = total / static_cast<double>(counts[l]);
        mean += weights[l];
    }
    mean /= static_cast<double>(counts.size());
    for (auto& w : weights) w /= mean;
    return weights;
}

template <class S>
struct SigmoidLoss {
    Vec<S> probabilities;
    S loss = 0;
    Vec<S> d_logits;  // gradient of the summed loss wrt logits
};

// Per-label sigmoid with weighted binary cross entropy, summed over labels.
template <class S>
SigmoidLoss<S> multilabel_loss(const Vec<S>& logits, const std::vector<std::uint8_t>& targets,
                               const std::vector<double>& weights) {
    const Eigen::Index labels = logits.size();
    check(static_cast<Eigen::Index>(targets.size()) == labels,
          "multilabel_loss: target size mismatch");
    check(static_cast<Eigen::Index>(weights.size()) == labels,
          "multilabel_loss: weight size mismatch");
    SigmoidLoss<S> result;
    result.probabilities.resize(labels);
    result.d_logits.resize(labels);
    for (Eigen::Index l = 0; l < labels; ++l) {
        const S z = logits[l];
        const S y = targets[static_cast<std::size_t>(l)] ? S(1) : S(0);
        const S w = static_cast<S>(weights[static_cast<std::size_t>(l)]);
        result.probabilities[l] = S(1) / (S(1) + std::exp(-z));
        // stable BCE: max(z,0) - z*y + log(1 + exp(-|z|))
        result.loss +=
            w * (std::max(z, S(0)) - z * y + std::log1p(std::exp(-std::abs(z))));
        result.d_logits[l] = w * (result.probabilities[l] - y);
    }
    return result;
}

// Single-unit sigmoid head with plain binary cross entropy.
template <class S>
SigmoidLoss<S> binary_loss(S logit, int target) {
    Vec<S> logits(1);
    logits[0] = logit;
    return multilabel_loss<S>(logits, {target != 0 ? std::uint8_t(1) : std::uint8_t(0)}, {1.0});
}

// ---------------------------------------------------------------------------
// Task model: lower encoder + upper encoder + one head

enum class TaskKind { lsi, seg, cjpe };

inline std::string task_name(TaskKind task) {
    switch (task) {
        case TaskKind::lsi: return "lsi";
        case TaskKind::seg: return "seg";
        case TaskKind::cjpe: return "cjpe";
    }
    fail("unknown task kind");
}

inline TaskKind task_from_name(const std::string& name) {
    if (name == "lsi") return TaskKind::lsi;
    if (name == "seg") return TaskKind::seg;
    if (name == "cjpe") return TaskKind::cjpe;
    fail("unknown task kind: " + name);
}

// One training document: segments plus whichever label field the task reads.
struct LabeledDoc {
    HierDocument segments;
    std::vector<std::uint8_t> multilabels;  // lsi, size = label count
    std::vector<int> roles;                 // seg, size = segment count
    int binary_label = 0;                   // cjpe
};

template <class S>
struct HierModel {
    TaskKind task = TaskKind::lsi;
    int labels = 0;
    EncoderConfig enc_config;
    HierConfig hier_config;
    Parameters<S> encoder;
    UpperParams<S> upper;
    HeadParams<S> head;  // lsi: [2h, L]; cjpe: [2h, 1]; seg: emission projection [2h, K]
    CrfParams<S> crf;    // seg only

    static HierModel create(TaskKind task, int labels, const EncoderConfig& enc_config,
                            const HierConfig& hier_config, Parameters<S> pretrained,
                            std::uint64_t seed) {
        check(labels >= 1, "HierModel: need at least one label");
        hier_config.validate();
        HierModel model;
        model.task = task;
        model.labels = labels;
        model.enc_config = enc_config;
        model.hier_config = hier_config;
        model.encoder = std::move(pretrained);
        const int ctx = 2 * hier_config.lstm_hidden;
        model.upper = UpperParams<S>::init(enc_config.hidden, hier_config.lstm_hidden,
                                           hier_config.attn_dim, seed);
        const int head_out = task == TaskKind::cjpe ? 1 : labels;
        model.head = HeadParams<S>::init(ctx, head_out, seed + 1);
        model.crf = CrfParams<S>::zeros(task == TaskKind::seg ? labels : 1);
        return model;
    }

    HierModel zeros_like() const {
        HierModel z;
        z.task = task;
        z.labels = labels;
        z.enc_config = enc_config;
        z.hier_config = hier_config;
        z.encoder = Parameters<S>::zeros(enc_config);
        z.upper = UpperParams<S>::zeros(enc_config.hidden, hier_config.lstm_hidden,
                                        hier_config.attn_dim);
        z.head = HeadParams<S>::zeros(static_cast<int>(head.w.rows()),
                                      static_cast<int>(head.w.cols()));
        z.crf = CrfParams<S>::zeros(static_cast<int>(crf.start.size()));
        return z;
    }

    // Trainable tensors: the pre-training heads (mlm/nsp/pooler) are carried
    // for serialization but take no part in fine-tuning.
    std::vector<TensorRef<S>> trainable_tensors() {
        std::vector<TensorRef<S>> refs;
        for (auto& t : encoder.tensors()) {
            if (t.name.rfind("mlm.", 0) == 0 || t.name.rfind("nsp.", 0) == 0 ||
                t.name.rfind("pooler.", 0) == 0) {
                continue;
            }
            refs.push_back(t);
        }
        for (auto& t : upper.tensors()) refs.push_back(t);
        for (auto& t : head.tensors("head.")) refs.push_back(t);
        if (task == TaskKind::seg) {
            for (auto& t : crf.tensors("head.crf.")) refs.push_back(t);
        }
        return refs;
    }

    static std::string group_of(const std::string& tensor_name) {
        if (tensor_name.rfind("upper.", 0) == 0) return "upper";
        if (tensor_name.rfind("head.", 0) == 0) return "head";
        return "encoder";
    }
};

template <class S>
struct DocLossResult {
    S loss = 0;
    Vec<S> probabilities;     // lsi / cjpe
    std::vector<int> decoded;  // seg (Viterbi)
    Vec<S> attention;
};

// Loss and prediction for one document; gradients accumulate into `grads`
// scaled by `grad_scale` (1/batch for mean-reduced batches).
template <class S>
DocLossResult<S> doc_loss_and_grads(HierModel<S>& model, const LabeledDoc& doc,
                                    const std::vector<double>& label_weights,
                                    HierModel<S>* grads = nullptr, double grad_scale = 1.0) {
    auto cache = encode_document(doc.segments, model.encoder, model.enc_config, model.upper,
                                 model.hier_config);
    const Eigen::Index n = cache.encoding.segment_cls.rows();
    DocLossResult<S> result;
    result.attention = cache.encoding.attention;

    Vec<S> d_pooled;
    Mat<S> d_contextual;
    Vec<S> d_attention;

    if (model.task == TaskKind::seg) {
        check(static_cast<Eigen::Index>(doc.roles.size()) == n,
              "doc loss: role count does not match segment count");
        Mat<S> emissions =
            (cache.encoding.contextual * model.head.w).rowwise() + model.head.b.transpose();
        auto crf_result = crf_nll(emissions, doc.roles, model.crf);
        result.loss = crf_result.loss;
        result.decoded = crf_decode(emissions, model.crf);
        if (grads != nullptr) {
            const S scale = static_cast<S>(grad_scale);
            Mat<S> d_emissions = crf_result.d_emissions * scale;
            grads->crf.trans += crf_result.d_trans * scale;
            grads->crf.start += crf_result.d_start * scale;
            grads->crf.end += crf_result.d_end * scale;
            grads->head.w.noalias() += cache.encoding.contextual.transpose() * d_emissions;
            grads->head.b += d_emissions.colwise().sum().transpose();
            d_contextual = d_emissions * model.head.w.transpose();
        }
    } else {
        Vec<S> logits =
            (cache.encoding.pooled.transpose() * model.head.w).transpose() + model.head.b;
        SigmoidLoss<S> sig;
        if (model.task == TaskKind::lsi) {
            sig = multilabel_loss(logits, doc.multilabels, label_weights);
        } else {
            sig = binary_loss(logits[0], doc.binary_label);
        }
        result.loss = sig.loss;
        result.probabilities = sig.probabilities;
        if (grads != nullptr) {
            const S scale = static_cast<S>(grad_scale);
            Vec<S> d_logits = sig.d_logits * scale;
            grads->head.w.noalias() += cache.encoding.pooled * d_logits.transpose();
            grads->head.b += d_logits;
            d_pooled = model.head.w * d_logits;
        }
    }

    if (grads != nullptr) {
        document_backward(cache, model.encoder, model.enc_config, model.upper, d_pooled,
                          d_contextual, d_attention, grads->encoder, grads->upper);
    }
    return result;
}

// One AdamW step over a document batch with group-specific learning rates
// ("encoder", "upper", "head"); a group missing from lr_map is an error.
template <class S>
S finetune_step(HierModel<S>& model, const std::vector<LabeledDoc>& batch,
                const std::vector<double>& label_weights, const std::map<std::string, double>& lr_map,
                OptimizerState<S>& opt, const AdamWConfig& adamw) {
    check(!batch.empty(), "finetune_step: empty batch");
    HierModel<S> grads = model.zeros_like();
    S loss = 0;
    const double scale = 1.0 / static_cast<double>(batch.size());
    for (const auto& doc : batch) {
        loss += doc_loss_and_grads(model, doc, label_weights, &grads, scale).loss;
    }
    loss *= static_cast<S>(scale);

    auto params = model.trainable_tensors();
    auto grad_refs = grads.trainable_tensors();
    std::vector<double> lrs(params.size());
    for (std::size_t t = 0; t < params.size(); ++t) {
        const std::string group = HierModel<S>::group_of(params[t].name);
        auto it = lr_map.find(group);
        check(it != lr_map.end(), "finetune_step: no learning rate for group \"" + group + "\"");
        lrs[t] = it->second;
    }
    adamw_step(params, grad_refs, opt, adamw, lrs);
    return loss;
}

}  // namespace lexforge
