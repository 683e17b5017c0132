#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "lexforge/masking.hpp"
#include "lexforge/rng.hpp"
#include "lexforge/tensor.hpp"

namespace lexforge {

// ---------------------------------------------------------------------------
// Configuration

struct EncoderConfig {
    int layers = 4;
    int hidden = 128;
    int heads = 4;
    int ff_dim = 512;
    int max_position = 512;
    int vocab_size = 0;
    int type_vocab = 2;
    double dropout = 0.0;
    double ln_eps = 1e-12;

    void validate() const {
        check(layers >= 1, "EncoderConfig: layers must be >= 1");
        check(hidden >= 1 && heads >= 1 && hidden % heads == 0,
              "EncoderConfig: heads must divide hidden");
        check(ff_dim >= 1, "EncoderConfig: ff_dim must be >= 1");
        check(vocab_size > 5, "EncoderConfig: vocab_size must exceed the specials");
        check(dropout >= 0.0 && dropout < 1.0, "EncoderConfig: dropout must be in [0, 1)");
        check(max_position >= 1, "EncoderConfig: max_position must be >= 1");
    }

    nlohmann::json to_json() const {
        return {{"layers", layers},
                {"hidden", hidden},
                {"heads", heads},
                {"ff_dim", ff_dim},
                {"max_position", max_position},
                {"vocab_size", vocab_size},
                {"type_vocab", type_vocab},
                {"dropout", dropout},
                {"ln_eps", ln_eps}};
    }

    static EncoderConfig from_json(const nlohmann::json& j) {
        EncoderConfig config;
        config.layers = j.at("layers").get<int>();
        config.hidden = j.at("hidden").get<int>();
        config.heads = j.at("heads").get<int>();
        config.ff_dim = j.at("ff_dim").get<int>();
        config.max_position = j.at("max_position").get<int>();
        config.vocab_size = j.at("vocab_size").get<int>();
        config.type_vocab = j.at("type_vocab").get<int>();
        config.dropout = j.at("dropout").get<double>();
        config.ln_eps = j.at("ln_eps").get<double>();
        return config;
    }
};

// ---------------------------------------------------------------------------
// Parameters

template <class S>
struct EncoderLayerParams {
    Mat<S> wq, wk, wv, wo;      // [d, d]
    Vec<S> bq, bk, bv, bo;      // [d]
    Vec<S> ln1_gain, ln1_bias;  // [d]
    Mat<S> w1;                  // [d, f]
    Vec<S> b1;                  // [f]
    Mat<S> w2;                  // [f, d]
    Vec<S> b2;                  // [d]
    Vec<S> ln2_gain, ln2_bias;  // [d]
};

// All learnable state of the lower encoder, the pooler, and the two
// pre-training heads. Linear layers follow the row-vector convention
// y = x * W + b throughout, so dW = x^T dy and dx = dy W^T.
template <class S>
struct Parameters {
    Mat<S> tok_emb;  // [V, d]
    Mat<S> pos_emb;  // [max_position, d]
    Mat<S> seg_emb;  // [type_vocab, d]
    Vec<S> emb_ln_gain, emb_ln_bias;
    std::vector<EncoderLayerParams<S>> layers;
    Mat<S> pooler_w;  // [d, d]
    Vec<S> pooler_b;
    Mat<S> mlm_w;  // [d, V]
    Vec<S> mlm_b;
    Mat<S> nsp_w;  // [d, 2]
    Vec<S> nsp_b;

    static Parameters zeros(const EncoderConfig& config) {
        config.validate();
        Parameters p;
        const int d = config.hidden, f = config.ff_dim, v = config.vocab_size;
        p.tok_emb = Mat<S>::Zero(v, d);
        p.pos_emb = Mat<S>::Zero(config.max_position, d);
        p.seg_emb = Mat<S>::Zero(config.type_vocab, d);
        p.emb_ln_gain = Vec<S>::Zero(d);
        p.emb_ln_bias = Vec<S>::Zero(d);
        p.layers.resize(static_cast<std::size_t>(config.layers));
        for (auto& layer : p.layers) {
            layer.wq = Mat<S>::Zero(d, d);
            layer.wk = Mat<S>::Zero(d, d);
            layer.wv = Mat<S>::Zero(d, d);
            layer.wo = Mat<S>::Zero(d, d);
            layer.bq = Vec<S>::Zero(d);
            layer.bk = Vec<S>::Zero(d);
            layer.bv = Vec<S>::Zero(d);
            layer.bo = Vec<S>::Zero(d);
            layer.ln1_gain = Vec<S>::Zero(d);
            layer.ln1_bias = Vec<S>::Zero(d);
            layer.w1 = Mat<S>::Zero(d, f);
            layer.b1 = Vec<S>::Zero(f);
            layer.w2 = Mat<S>::Zero(f, d);
            layer.b2 = Vec<S>::Zero(d);
            layer.ln2_gain = Vec<S>::Zero(d);
            layer.ln2_bias = Vec<S>::Zero(d);
        }
        p.pooler_w = Mat<S>::Zero(d, d);
        p.pooler_b = Vec<S>::Zero(d);
        p.mlm_w = Mat<S>::Zero(d, v);
        p.mlm_b = Vec<S>::Zero(v);
        p.nsp_w = Mat<S>::Zero(d, 2);
        p.nsp_b = Vec<S>::Zero(2);
        return p;
    }

    // truncated normal (std 0.02) weights, zero biases, unit layer-norm gains
    static Parameters init(const EncoderConfig& config, std::uint64_t seed) {
        Parameters p = zeros(config);
        RngStream rng = RngStream::derive(seed, "encoder_init");
        auto fill = [&](Mat<S>& m) {
            for (Eigen::Index i = 0; i < m.size(); ++i) {
                m.data()[i] = static_cast<S>(rng.next_truncated_normal(0.02));
            }
        };
        fill(p.tok_emb);
        fill(p.pos_emb);
        fill(p.seg_emb);
        p.emb_ln_gain.setOnes();
        for (auto& layer : p.layers) {
            fill(layer.wq);
            fill(layer.wk);
            fill(layer.wv);
            fill(layer.wo);
            fill(layer.w1);
            fill(layer.w2);
            layer.ln1_gain.setOnes();
            layer.ln2_gain.setOnes();
        }
        fill(p.pooler_w);
        fill(p.mlm_w);
        fill(p.nsp_w);
        return p;
    }

    std::vector<TensorRef<S>> tensors() {
        std::vector<TensorRef<S>> refs;
        refs.push_back(ref("embed.token", tok_emb, true));
        refs.push_back(ref("embed.position", pos_emb, true));
        refs.push_back(ref("embed.segment", seg_emb, true));
        refs.push_back(ref("embed.ln.gain", emb_ln_gain, false));
        refs.push_back(ref("embed.ln.bias", emb_ln_bias, false));
        for (std::size_t i = 0; i < layers.size(); ++i) {
            const std::string at = "layer." + std::to_string(i) + ".";
            auto& l = layers[i];
            refs.push_back(ref(at + "attn.wq", l.wq, true));
            refs.push_back(ref(at + "attn.bq", l.bq, false));
            refs.push_back(ref(at + "attn.wk", l.wk, true));
            refs.push_back(ref(at + "attn.bk", l.bk, false));
            refs.push_back(ref(at + "attn.wv", l.wv, true));
            refs.push_back(ref(at + "attn.bv", l.bv, false));
            refs.push_back(ref(at + "attn.wo", l.wo, true));
            refs.push_back(ref(at + "attn.bo", l.bo, false));
            refs.push_back(ref(at + "ln1.gain", l.ln1_gain, false));
            refs.push_back(ref(at + "ln1.bias", l.ln1_bias, false));
            refs.push_back(ref(at + "ff.w1", l.w1, true));
            refs.push_back(ref(at + "ff.b1", l.b1, false));
            refs.push_back(ref(at + "ff.w2", l.w2, true));
            refs.push_back(ref(at + "ff.b2", l.b2, false));
            refs.push_back(ref(at + "ln2.gain", l.ln2_gain, false));
            refs.push_back(ref(at + "ln2.bias", l.ln2_bias, false));
        }
        refs.push_back(ref("pooler.weight", pooler_w, true));
        refs.push_back(ref("pooler.bias", pooler_b, false));
        refs.push_back(ref("mlm.weight", mlm_w, true));
        refs.push_back(ref("mlm.bias", mlm_b, false));
        refs.push_back(ref("nsp.weight", nsp_w, true));
        refs.push_back(ref("nsp.bias", nsp_b, false));
        return refs;
    }

    void accumulate(Parameters& other) {
        auto mine = tensors();
        auto theirs = other.tensors();
        for (std::size_t i = 0; i < mine.size(); ++i) {
            Eigen::Map<Vec<S>>(mine[i].data, mine[i].size()) +=
                Eigen::Map<const Vec<S>>(theirs[i].data, theirs[i].size());
        }
    }
};

// Shape-preserving scalar conversion (f32 training state <-> f64 checks).
template <class To, class From>
Parameters<To> cast_parameters(const Parameters<From>& params) {
    Parameters<To> out;
    auto assign = [](auto& dst, const auto& src) { dst = src.template cast<To>(); };
    assign(out.tok_emb, params.tok_emb);
    assign(out.pos_emb, params.pos_emb);
    assign(out.seg_emb, params.seg_emb);
    assign(out.emb_ln_gain, params.emb_ln_gain);
    assign(out.emb_ln_bias, params.emb_ln_bias);
    out.layers.resize(params.layers.size());
    for (std::size_t i = 0; i < params.layers.size(); ++i) {
        const auto& s = params.layers[i];
        auto& d = out.layers[i];
        assign(d.wq, s.wq);
        assign(d.wk, s.wk);
        assign(d.wv, s.wv);
        assign(d.wo, s.wo);
        assign(d.bq, s.bq);
        assign(d.bk, s.bk);
        assign(d.bv, s.bv);
        assign(d.bo, s.bo);
        assign(d.ln1_gain, s.ln1_gain);
        assign(d.ln1_bias, s.ln1_bias);
        assign(d.w1, s.w1);
        assign(d.b1, s.b1);
        assign(d.w2, s.w2);
        assign(d.b2, s.b2);
        assign(d.ln2_gain, s.ln2_gain);
        assign(d.ln2_bias, s.ln2_bias);
    }
    assign(out.pooler_w, params.pooler_w);
    assign(out.pooler_b, params.pooler_b);
    assign(out.mlm_w, params.mlm_w);
    assign(out.mlm_b, params.mlm_b);
    assign(out.nsp_w, params.nsp_w);
    assign(out.nsp_b, params.nsp_b);
    return out;
}

// ---------------------------------------------------------------------------
// Layer norm with cached statistics

namespace nn_detail {

template <class S>
struct LayerNormCache {
    Mat<S> input;    // pre-norm activations
    Vec<S> mean;     // per position
    Vec<S> inv_std;  // per position
};

template <class S>
Mat<S> layer_norm(const Mat<S>& x, const Vec<S>& gain, const Vec<S>& bias, double eps,
                  LayerNormCache<S>& cache) {
    cache.input = x;
    cache.mean = x.rowwise().mean();
    Mat<S> centered = x.colwise() - cache.mean;
    Vec<S> var = centered.array().square().rowwise().mean().matrix();
    cache.inv_std = (var.array() + static_cast<S>(eps)).rsqrt().matrix();
    Mat<S> xhat = (centered.array().colwise() * cache.inv_std.array()).matrix();
    return ((xhat.array().rowwise() * gain.transpose().array()).rowwise() +
            bias.transpose().array())
        .matrix();
}

// Returns d_input; accumulates d_gain and d_bias.
template <class S>
Mat<S> layer_norm_backward(const Mat<S>& d_out, const LayerNormCache<S>& cache,
                           const Vec<S>& gain, Vec<S>& d_gain, Vec<S>& d_bias) {
    Mat<S> centered = cache.input.colwise() - cache.mean;
    Mat<S> xhat = (centered.array().colwise() * cache.inv_std.array()).matrix();
    d_gain += (d_out.array() * xhat.array()).colwise().sum().matrix().transpose();
    d_bias += d_out.colwise().sum().transpose();
    Mat<S> d_xhat = (d_out.array().rowwise() * gain.transpose().array()).matrix();
    Vec<S> m1 = d_xhat.rowwise().mean();
    Vec<S> m2 = (d_xhat.array() * xhat.array()).rowwise().mean().matrix();
    Mat<S> inner =
        ((d_xhat.colwise() - m1).array() - (xhat.array().colwise() * m2.array())).matrix();
    return (inner.array().colwise() * cache.inv_std.array()).matrix();
}

// Inverted-dropout mask: entries are 0 or 1/(1-p).
template <class S>
Mat<S> dropout_mask(Eigen::Index rows, Eigen::Index cols, double p, RngStream& rng) {
    Mat<S> mask(rows, cols);
    const S scale = static_cast<S>(1.0 / (1.0 - p));
    for (Eigen::Index i = 0; i < mask.size(); ++i) {
        mask.data()[i] = rng.next_double() < p ? S(0) : scale;
    }
    return mask;
}

}  // namespace nn_detail

// ---------------------------------------------------------------------------
// Forward pass with cached activations

template <class S>
struct EncoderLayerCache {
    Mat<S> input;              // [n, d]
    Mat<S> q, k, v;            // [n, d]
    std::vector<Mat<S>> attn;  // per head, softmaxed scores [n, n]
    Mat<S> ctx;                // [n, d]
    Mat<S> attn_drop;          // dropout mask (empty when inactive)
    nn_detail::LayerNormCache<S> ln1;
    Mat<S> ln1_out;            // [n, d]
    Mat<S> ff_pre;             // [n, f]
    Mat<S> ff_act;             // [n, f]
    Mat<S> ff_drop;
    nn_detail::LayerNormCache<S> ln2;
    Mat<S> out;                // [n, d]
};

template <class S>
struct EncoderRowCache {
    std::vector<int> ids;
    std::vector<int> segs;
    Vec<S> key_bias;  // additive attention bias per key (0 or kMaskedScore)
    Mat<S> emb_sum;
    nn_detail::LayerNormCache<S> emb_ln;
    Mat<S> emb_out;
    Mat<S> emb_drop;
    std::vector<EncoderLayerCache<S>> layers;

    const Mat<S>& hidden() const { return layers.back().out; }
};

// One sequence through the encoder stack. When train_mode is set and
// config.dropout > 0, rng must be non-null and the realized dropout masks are
// kept in the cache so the backward pass differentiates the sampled network.
template <class S>
EncoderRowCache<S> encoder_forward_row(std::span<const std::int32_t> ids,
                                       std::span<const std::int32_t> segs,
                                       std::span<const std::int32_t> attention_mask,
                                       const Parameters<S>& params, const EncoderConfig& config,
                                       bool train_mode = false, RngStream* rng = nullptr) {
    const Eigen::Index n = static_cast<Eigen::Index>(ids.size());
    check(n >= 1, "encoder: empty input row");
    check(n <= config.max_position, "encoder: input longer than max_position");
    check(segs.size() == ids.size() && attention_mask.size() == ids.size(),
          "encoder: input spans must have equal length");
    const int d = config.hidden;
    const int heads = config.heads;
    const int dh = d / heads;
    const bool drop = train_mode && config.dropout > 0.0;
    check(!drop || rng != nullptr, "encoder: dropout requires an rng");

    EncoderRowCache<S> cache;
    cache.ids.assign(ids.begin(), ids.end());
    cache.segs.assign(segs.begin(), segs.end());
    cache.key_bias = Vec<S>::Zero(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        if (attention_mask[static_cast<std::size_t>(i)] == 0) {
            cache.key_bias[i] = static_cast<S>(kMaskedScore);
        }
    }

    cache.emb_sum.resize(n, d);
    for (Eigen::Index i = 0; i < n; ++i) {
        const int tok = cache.ids[static_cast<std::size_t>(i)];
        const int seg = cache.segs[static_cast<std::size_t>(i)];
        check(tok >= 0 && tok < config.vocab_size,
              "encoder: token id out of range: " + std::to_string(tok));
        check(seg >= 0 && seg < config.type_vocab, "encoder: segment id out of range");
        cache.emb_sum.row(i) =
            params.tok_emb.row(tok) + params.pos_emb.row(i) + params.seg_emb.row(seg);
    }
    cache.emb_out = nn_detail::layer_norm(cache.emb_sum, params.emb_ln_gain, params.emb_ln_bias,
                                          config.ln_eps, cache.emb_ln);
    if (drop) {
        cache.emb_drop = nn_detail::dropout_mask<S>(n, d, config.dropout, *rng);
        cache.emb_out.array() *= cache.emb_drop.array();
    }

    const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));
    Mat<S> x = cache.emb_out;
    cache.layers.resize(params.layers.size());
    for (std::size_t li = 0; li < params.layers.size(); ++li) {
        const auto& lp = params.layers[li];
        auto& lc = cache.layers[li];
        lc.input = x;
        lc.q = (x * lp.wq).rowwise() + lp.bq.transpose();
        lc.k = (x * lp.wk).rowwise() + lp.bk.transpose();
        lc.v = (x * lp.wv).rowwise() + lp.bv.transpose();
        lc.ctx.resize(n, d);
        lc.attn.resize(static_cast<std::size_t>(heads));
        for (int h = 0; h < heads; ++h) {
            auto qh = lc.q.middleCols(h * dh, dh);
            auto kh = lc.k.middleCols(h * dh, dh);
            auto vh = lc.v.middleCols(h * dh, dh);
            Mat<S> scores = (qh * kh.transpose()) * inv_sqrt_dh;
            scores.rowwise() += cache.key_bias.transpose();
            softmax_rows(scores);
            lc.attn[static_cast<std::size_t>(h)] = scores;
            lc.ctx.middleCols(h * dh, dh).noalias() = scores * vh;
        }
        Mat<S> attn_out = (lc.ctx * lp.wo).rowwise() + lp.bo.transpose();
        if (drop) {
            lc.attn_drop = nn_detail::dropout_mask<S>(n, d, config.dropout, *rng);
            attn_out.array() *= lc.attn_drop.array();
        }
        Mat<S> res1 = x + attn_out;
        lc.ln1_out = nn_detail::layer_norm(res1, lp.ln1_gain, lp.ln1_bias, config.ln_eps, lc.ln1);

        lc.ff_pre = (lc.ln1_out * lp.w1).rowwise() + lp.b1.transpose();
        lc.ff_act = lc.ff_pre.unaryExpr([](S v) { return gelu(v); });
        Mat<S> ff_out = (lc.ff_act * lp.w2).rowwise() + lp.b2.transpose();
        if (drop) {
            lc.ff_drop = nn_detail::dropout_mask<S>(n, config.hidden, config.dropout, *rng);
            ff_out.array() *= lc.ff_drop.array();
        }
        Mat<S> res2 = lc.ln1_out + ff_out;
        lc.out = nn_detail::layer_norm(res2, lp.ln2_gain, lp.ln2_bias, config.ln_eps, lc.ln2);
        x = lc.out;
    }
    check(all_finite(cache.layers.back().out), "encoder: non-finite hidden states");
    return cache;
}

// Batch forward; hidden states per row, shape [seq, hidden].
template <class S>
std::vector<Mat<S>> encoder_forward(const MaskedBatch& batch, const Parameters<S>& params,
                                    const EncoderConfig& config, bool train_mode = false,
                                    RngStream* rng = nullptr) {
    std::vector<Mat<S>> hidden;
    hidden.reserve(static_cast<std::size_t>(batch.rows));
    for (int r = 0; r < batch.rows; ++r) {
        const std::size_t base = static_cast<std::size_t>(r) * static_cast<std::size_t>(batch.cols);
        auto cache = encoder_forward_row<S>(
            {batch.input_ids.data() + base, static_cast<std::size_t>(batch.cols)},
            {batch.segment_ids.data() + base, static_cast<std::size_t>(batch.cols)},
            {batch.attention_mask.data() + base, static_cast<std::size_t>(batch.cols)}, params,
            config, train_mode, rng);
        hidden.push_back(cache.hidden());
    }
    return hidden;
}

// Accumulates parameter gradients for one row given d_hidden at the stack
// output; returns nothing (gradient of the input embedding is a scatter-add).
template <class S>
void encoder_backward_row(const EncoderRowCache<S>& cache, const Mat<S>& d_hidden,
                          const Parameters<S>& params, const EncoderConfig& config,
                          Parameters<S>& grads) {
    const Eigen::Index n = cache.emb_sum.rows();
    const int d = config.hidden;
    const int heads = config.heads;
    const int dh = d / heads;
    const S inv_sqrt_dh = static_cast<S>(1.0 / std::sqrt(static_cast<double>(dh)));

    Mat<S> dx = d_hidden;
    for (std::size_t li = params.layers.size(); li-- > 0;) {
        const auto& lp = params.layers[li];
        const auto& lc = cache.layers[li];
        auto& lg = grads.layers[li];

        // ln2
        Mat<S> d_res2 =
            nn_detail::layer_norm_backward(dx, lc.ln2, lp.ln2_gain, lg.ln2_gain, lg.ln2_bias);
        // feed-forward
        Mat<S> d_ff_out = d_res2;
        if (lc.ff_drop.size() > 0) d_ff_out.array() *= lc.ff_drop.array();
        lg.w2.noalias() += lc.ff_act.transpose() * d_ff_out;
        lg.b2 += d_ff_out.colwise().sum().transpose();
        Mat<S> d_ff_act = d_ff_out * lp.w2.transpose();
        Mat<S> d_ff_pre =
            (d_ff_act.array() * lc.ff_pre.unaryExpr([](S v) { return gelu_grad(v); }).array())
                .matrix();
        lg.w1.noalias() += lc.ln1_out.transpose() * d_ff_pre;
        lg.b1 += d_ff_pre.colwise().sum().transpose();
        Mat<S> d_ln1_out = d_res2 + d_ff_pre * lp.w1.transpose();

        // ln1
        Mat<S> d_res1 = nn_detail::layer_norm_backward(d_ln1_out, lc.ln1, lp.ln1_gain,
                                                       lg.ln1_gain, lg.ln1_bias);
        // attention output projection
        Mat<S> d_attn_out = d_res1;
        if (lc.attn_drop.size() > 0) d_attn_out.array() *= lc.attn_drop.array();
        lg.wo.noalias() += lc.ctx.transpose() * d_attn_out;
        lg.bo += d_attn_out.colwise().sum().transpose();
        Mat<S> d_ctx = d_attn_out * lp.wo.transpose();

        // attention per head
        Mat<S> dq(n, d), dk(n, d), dv(n, d);
        for (int h = 0; h < heads; ++h) {
            const auto& a = lc.attn[static_cast<std::size_t>(h)];
            auto vh = lc.v.middleCols(h * dh, dh);
            auto qh = lc.q.middleCols(h * dh, dh);
            auto kh = lc.k.middleCols(h * dh, dh);
            Mat<S> d_ctx_h = d_ctx.middleCols(h * dh, dh);
            Mat<S> d_a = d_ctx_h * vh.transpose();
            dv.middleCols(h * dh, dh).noalias() = a.transpose() * d_ctx_h;
            // softmax backward: dS = A .* (dA - rowsum(dA .* A))
            Vec<S> row_dot = (d_a.array() * a.array()).rowwise().sum().matrix();
            Mat<S> d_s = (a.array() * (d_a.colwise() - row_dot).array()).matrix();
            dq.middleCols(h * dh, dh).noalias() = (d_s * kh) * inv_sqrt_dh;
            dk.middleCols(h * dh, dh).noalias() = (d_s.transpose() * qh) * inv_sqrt_dh;
        }
        lg.wq.noalias() += lc.input.transpose() * dq;
        lg.bq += dq.colwise().sum().transpose();
        lg.wk.noalias() += lc.input.transpose() * dk;
        lg.bk += dk.colwise().sum().transpose();
        lg.wv.noalias() += lc.input.transpose() * dv;
        lg.bv += dv.colwise().sum().transpose();

        dx = d_res1 + dq * lp.wq.transpose() + dk * lp.wk.transpose() + dv * lp.wv.transpose();
    }

    // embedding block
    if (cache.emb_drop.size() > 0) dx.array() *= cache.emb_drop.array();
    Mat<S> d_emb_sum = nn_detail::layer_norm_backward(dx, cache.emb_ln, params.emb_ln_gain,
                                                      grads.emb_ln_gain, grads.emb_ln_bias);
    for (Eigen::Index i = 0; i < n; ++i) {
        grads.tok_emb.row(cache.ids[static_cast<std::size_t>(i)]) += d_emb_sum.row(i);
        grads.pos_emb.row(i) += d_emb_sum.row(i);
        grads.seg_emb.row(cache.segs[static_cast<std::size_t>(i)]) += d_emb_sum.row(i);
    }
}

// ---------------------------------------------------------------------------
// Heads

// Per-position vocabulary logits; softmax is applied only inside the loss.
template <class S>
Mat<S> mlm_logits(const Mat<S>& hidden, const Parameters<S>& params) {
    return (hidden * params.mlm_w).rowwise() + params.mlm_b.transpose();
}

// Pooler (linear + tanh on the [CLS] state) into the 2-class NSP head.
template <class S>
Vec<S> nsp_logits(const Vec<S>& h_cls, const Parameters<S>& params) {
    Vec<S> pooled = ((h_cls.transpose() * params.pooler_w).transpose() + params.pooler_b)
                        .array()
                        .tanh()
                        .matrix();
    return (pooled.transpose() * params.nsp_w).transpose() + params.nsp_b;
}

// ---------------------------------------------------------------------------
// Joint MLM + NSP loss with exact gradients

template <class S>
struct LossResult {
    S mlm_loss = 0;
    S nsp_loss = 0;
    std::int64_t masked_positions = 0;
    Parameters<S> grads;

    S total() const { return mlm_loss + nsp_loss; }
};

// L_MLM: mean cross entropy over positions whose label is not the ignore
// marker; L_NSP: mean cross entropy of the pair labels. Gradients are exact
// for the realized dropout sample. Rows are processed independently and
// merged in row order, so results do not depend on the worker count.
template <class S>
LossResult<S> loss_and_grads(const MaskedBatch& batch, const Parameters<S>& params,
                             const EncoderConfig& config, bool train_mode = false,
                             RngStream* rng = nullptr, int workers = 1) {
    check(batch.rows >= 1, "loss_and_grads: empty batch");
    LossResult<S> result;
    result.grads = Parameters<S>::zeros(config);

    std::int64_t total_masked = 0;
    for (const auto label : batch.mlm_labels) {
        if (label != kIgnoreLabel) ++total_masked;
    }
    result.masked_positions = total_masked;

    // dropout masks must come from one deterministic stream per row
    std::vector<std::uint64_t> row_seeds(static_cast<std::size_t>(batch.rows), 0);
    if (train_mode && config.dropout > 0.0) {
        check(rng != nullptr, "loss_and_grads: dropout requires an rng");
        for (auto& seed : row_seeds) seed = rng->next_u64();
    }

    struct RowOut {
        Parameters<S> grads;
        S mlm_nll = 0;
        S nsp_nll = 0;
    };
    std::vector<RowOut> rows(static_cast<std::size_t>(batch.rows));

    parallel_for(static_cast<std::size_t>(batch.rows), workers, [&](std::size_t r) {
        RowOut& out = rows[r];
        out.grads = Parameters<S>::zeros(config);
        const std::size_t base = r * static_cast<std::size_t>(batch.cols);
        const std::size_t width = static_cast<std::size_t>(batch.cols);
        RngStream row_rng(row_seeds[r]);
        const bool drop = train_mode && config.dropout > 0.0;

        auto cache = encoder_forward_row<S>({batch.input_ids.data() + base, width},
                                            {batch.segment_ids.data() + base, width},
                                            {batch.attention_mask.data() + base, width}, params,
                                            config, train_mode, drop ? &row_rng : nullptr);
        const Mat<S>& hidden = cache.hidden();
        Mat<S> d_hidden = Mat<S>::Zero(hidden.rows(), hidden.cols());

        // --- MLM over this row's masked positions
        std::vector<Eigen::Index> positions;
        for (std::size_t i = 0; i < width; ++i) {
            if (batch.mlm_labels[base + i] != kIgnoreLabel) {
                positions.push_back(static_cast<Eigen::Index>(i));
            }
        }
        if (!positions.empty() && total_masked > 0) {
            const Eigen::Index m = static_cast<Eigen::Index>(positions.size());
            Mat<S> h_masked(m, config.hidden);
            for (Eigen::Index i = 0; i < m; ++i) h_masked.row(i) = hidden.row(positions[static_cast<std::size_t>(i)]);
            Mat<S> logits = (h_masked * params.mlm_w).rowwise() + params.mlm_b.transpose();
            const S scale = S(1) / static_cast<S>(total_masked);
            Mat<S> d_logits(m, config.vocab_size);
            for (Eigen::Index i = 0; i < m; ++i) {
                const int label = batch.mlm_labels[base + static_cast<std::size_t>(
                                                             positions[static_cast<std::size_t>(i)])];
                auto row = logits.row(i);
                const S peak = row.maxCoeff();
                const S lse = peak + std::log((row.array() - peak).exp().sum());
                out.mlm_nll += (lse - row[label]) * scale;
                Vec<S> soft = (row.array() - lse).exp().matrix().transpose();
                soft[label] -= S(1);
                d_logits.row(i) = soft.transpose() * scale;
            }
            out.grads.mlm_w.noalias() += h_masked.transpose() * d_logits;
            out.grads.mlm_b += d_logits.colwise().sum().transpose();
            Mat<S> d_h_masked = d_logits * params.mlm_w.transpose();
            for (Eigen::Index i = 0; i < m; ++i) {
                d_hidden.row(positions[static_cast<std::size_t>(i)]) += d_h_masked.row(i);
            }
        }

        // --- NSP on the pooled [CLS] state
        {
            Vec<S> h_cls = hidden.row(0).transpose();
            Vec<S> pooled_pre = (h_cls.transpose() * params.pooler_w).transpose() + params.pooler_b;
            Vec<S> pooled = pooled_pre.array().tanh().matrix();
            Vec<S> logits = (pooled.transpose() * params.nsp_w).transpose() + params.nsp_b;
            const int label = batch.nsp_labels[r] ? 1 : 0;
            const S peak = logits.maxCoeff();
            const S lse = peak + std::log((logits.array() - peak).exp().sum());
            const S scale = S(1) / static_cast<S>(batch.rows);
            out.nsp_nll = (lse - logits[label]) * scale;
            Vec<S> d_logits = (logits.array() - lse).exp().matrix();
            d_logits[label] -= S(1);
            d_logits *= scale;
            out.grads.nsp_w.noalias() += pooled * d_logits.transpose();
            out.grads.nsp_b += d_logits;
            Vec<S> d_pooled = params.nsp_w * d_logits;
            Vec<S> d_pooled_pre =
                (d_pooled.array() * (S(1) - pooled.array() * pooled.array())).matrix();
            out.grads.pooler_w.noalias() += h_cls * d_pooled_pre.transpose();
            out.grads.pooler_b += d_pooled_pre;
            d_hidden.row(0) += (params.pooler_w * d_pooled_pre).transpose();
        }

        encoder_backward_row(cache, d_hidden, params, config, out.grads);
    });

    for (auto& row : rows) {
        result.mlm_loss += row.mlm_nll;
        result.nsp_loss += row.nsp_nll;
        result.grads.accumulate(row.grads);
    }
    return result;
}

}  // namespace lexforge
