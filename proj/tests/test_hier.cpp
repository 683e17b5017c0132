#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "lexforge/hier.hpp"

using namespace lexforge;

namespace {

EncoderConfig micro_encoder(int vocab_size) {
    EncoderConfig config;
    config.layers = 1;
    config.hidden = 8;
    config.heads = 2;
    config.ff_dim = 16;
    config.max_position = 8;
    config.vocab_size = vocab_size;
    config.dropout = 0.0;
    return config;
}

HierConfig micro_hier() {
    HierConfig config;
    config.max_segments = 16;
    config.segment_len = 8;
    config.lstm_hidden = 5;
    config.attn_dim = 4;
    return config;
}

std::vector<std::int32_t> segment_of(std::initializer_list<int> body) {
    std::vector<std::int32_t> ids{kClsId};
    for (int id : body) ids.push_back(id);
    ids.push_back(kSepId);
    return ids;
}

HierDocument random_doc(int segments, int body_len, int vocab_size, std::uint64_t seed) {
    RngStream rng(seed);
    HierDocument doc;
    for (int s = 0; s < segments; ++s) {
        std::vector<std::int32_t> ids{kClsId};
        for (int i = 0; i < body_len; ++i) {
            ids.push_back(5 + static_cast<int>(rng.next_below(
                                  static_cast<std::uint64_t>(vocab_size - 5))));
        }
        ids.push_back(kSepId);
        doc.push_back(std::move(ids));
    }
    return doc;
}

}  // namespace

TEST_CASE("a single-segment document pools with attention exactly one", "[hier]") {
    auto enc_config = micro_encoder(30);
    auto hier_config = micro_hier();
    auto encoder = Parameters<double>::init(enc_config, 1);
    auto upper = UpperParams<double>::init(enc_config.hidden, hier_config.lstm_hidden,
                                           hier_config.attn_dim, 2);
    HierDocument doc{segment_of({7, 8, 9})};
    auto cache = encode_document(doc, encoder, enc_config, upper, hier_config);
    REQUIRE(cache.encoding.attention.size() == 1);
    REQUIRE(cache.encoding.attention[0] == 1.0);
    REQUIRE(cache.encoding.pooled.size() == 2 * hier_config.lstm_hidden);
}

TEST_CASE("attention over any document sums to one", "[hier]") {
    auto enc_config = micro_encoder(30);
    auto hier_config = micro_hier();
    auto encoder = Parameters<double>::init(enc_config, 3);
    auto upper = UpperParams<double>::init(enc_config.hidden, hier_config.lstm_hidden,
                                           hier_config.attn_dim, 4);
    for (std::uint64_t seed = 0; seed < 8; ++seed) {
        auto doc = random_doc(2 + static_cast<int>(seed % 5), 4, 30, seed);
        auto cache = encode_document(doc, encoder, enc_config, upper, hier_config);
        REQUIRE(cache.encoding.attention.sum() == Catch::Approx(1.0).margin(1e-6));
        REQUIRE(cache.encoding.attention.minCoeff() >= 0.0);
    }
}

TEST_CASE("identical segments produce identical CLS rows wherever they sit", "[hier]") {
    auto enc_config = micro_encoder(30);
    auto hier_config = micro_hier();
    auto encoder = Parameters<double>::init(enc_config, 5);
    auto upper = UpperParams<double>::init(enc_config.hidden, hier_config.lstm_hidden,
                                           hier_config.attn_dim, 6);
    HierDocument doc{segment_of({7, 8}), segment_of({11, 12}), segment_of({20, 21})};
    HierDocument swapped{doc[2], doc[1], doc[0]};
    auto a = encode_document(doc, encoder, enc_config, upper, hier_config);
    auto b = encode_document(swapped, encoder, enc_config, upper, hier_config);
    // the lower encoder is a pure function of the segment, so the CLS rows
    // permute with the segments
    REQUIRE((a.encoding.segment_cls.row(0).array() == b.encoding.segment_cls.row(2).array()).all());
    REQUIRE((a.encoding.segment_cls.row(1).array() == b.encoding.segment_cls.row(1).array()).all());
    REQUIRE((a.encoding.segment_cls.row(2).array() == b.encoding.segment_cls.row(0).array()).all());
}

TEST_CASE("attention pooling ignores constant score shifts", "[hier]") {
    auto enc_config = micro_encoder(30);
    auto hier_config = micro_hier();
    auto encoder = Parameters<double>::init(enc_config, 7);
    auto upper = UpperParams<double>::init(enc_config.hidden, hier_config.lstm_hidden,
                                           hier_config.attn_dim, 8);
    auto doc = random_doc(5, 4, 30, 9);
    auto cache = encode_document(doc, encoder, enc_config, upper, hier_config);

    Vec<double> shifted = cache.attn.scores.array() + 5.0;
    const double peak = shifted.maxCoeff();
    Vec<double> p = (shifted.array() - peak).exp().matrix();
    p /= p.sum();
    REQUIRE((p - cache.encoding.attention).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("empty documents are rejected", "[hier]") {
    auto enc_config = micro_encoder(30);
    auto hier_config = micro_hier();
    auto encoder = Parameters<double>::init(enc_config, 10);
    auto upper = UpperParams<double>::init(enc_config.hidden, hier_config.lstm_hidden,
                                           hier_config.attn_dim, 11);
    REQUIRE_THROWS_AS(encode_document({}, encoder, enc_config, upper, hier_config), Error);
}

TEST_CASE("label weights are inverse-frequency, normalized to mean one", "[hier]") {
    auto weights = label_weights_from_counts({10, 40});
    REQUIRE(weights[0] == Catch::Approx(1.6));
    REQUIRE(weights[1] == Catch::Approx(0.4));
    REQUIRE_THROWS_AS(label_weights_from_counts({5, 0, 3}), Error);
}

TEST_CASE("multilabel loss at zero logits is 0.5 everywhere", "[hier]") {
    Vec<double> logits = Vec<double>::Zero(4);
    auto sig = multilabel_loss<double>(logits, {1, 0, 1, 0}, {1.0, 1.0, 1.0, 1.0});
    for (int l = 0; l < 4; ++l) REQUIRE(sig.probabilities[l] == Catch::Approx(0.5));
    REQUIRE(sig.loss == Catch::Approx(4.0 * std::log(2.0)).margin(1e-12));
}

TEST_CASE("confident correct predictions drive the loss to zero", "[hier]") {
    Vec<double> logits(3);
    logits << 40.0, -40.0, 40.0;
    auto sig = multilabel_loss<double>(logits, {1, 0, 1}, {1.0, 1.0, 1.0});
    REQUIRE(sig.loss < 1e-12);
}

TEST_CASE("binary head identities", "[hier]") {
    auto mid = binary_loss<double>(0.0, 1);
    REQUIRE(mid.probabilities[0] == Catch::Approx(0.5));
    REQUIRE(mid.loss == Catch::Approx(std::log(2.0)).margin(1e-12));
    auto mid0 = binary_loss<double>(0.0, 0);
    REQUIRE(mid0.loss == Catch::Approx(std::log(2.0)).margin(1e-12));
    auto confident = binary_loss<double>(35.0, 1);
    REQUIRE(confident.loss < 1e-12);
}

namespace {

LabeledDoc labeled_doc(TaskKind task, int labels, int segments, std::uint64_t seed) {
    LabeledDoc doc;
    doc.segments = random_doc(segments, 4, 30, seed);
    RngStream rng(seed + 1000);
    if (task == TaskKind::lsi) {
        doc.multilabels.resize(static_cast<std::size_t>(labels));
        for (auto& y : doc.multilabels) y = rng.next_bool() ? 1 : 0;
    } else if (task == TaskKind::seg) {
        doc.roles.resize(static_cast<std::size_t>(segments));
        for (auto& role : doc.roles) {
            role = static_cast<int>(rng.next_below(static_cast<std::uint64_t>(labels)));
        }
    } else {
        doc.binary_label = rng.next_bool() ? 1 : 0;
    }
    return doc;
}

void fd_check_model(TaskKind task, std::uint64_t seed) {
    const int labels = 3;
    auto enc_config = micro_encoder(30);
    auto hier_config = micro_hier();
    auto model = HierModel<double>::create(task, labels, enc_config, hier_config,
                                           Parameters<double>::init(enc_config, seed), seed + 1);
    auto doc = labeled_doc(task, labels, 3, seed + 2);
    const std::vector<double> weights(static_cast<std::size_t>(labels), 1.0);

    auto grads = model.zeros_like();
    auto base = doc_loss_and_grads(model, doc, weights, &grads);

    auto params = model.trainable_tensors();
    auto grad_refs = grads.trainable_tensors();
    const double eps = 1e-5;
    for (std::size_t t = 0; t < params.size(); ++t) {
        for (Eigen::Index i = 0; i < params[t].size(); ++i) {
            double& slot = params[t].data[i];
            const double saved = slot;
            slot = saved + eps;
            const double plus = doc_loss_and_grads(model, doc, weights).loss;
            slot = saved - eps;
            const double minus = doc_loss_and_grads(model, doc, weights).loss;
            slot = saved;
            const double fd = (plus - minus) / (2.0 * eps);
            const double an = grad_refs[t].data[i];
            const double rel = std::abs(fd - an) / std::max({std::abs(fd), std::abs(an), 1e-5});
            if (rel >= 1e-4) {
                INFO("task " << task_name(task) << " tensor " << params[t].name << " element "
                             << i << " fd " << fd << " analytic " << an);
                REQUIRE(rel < 1e-4);
            }
        }
    }
    REQUIRE(base.loss > 0.0);
}

}  // namespace

TEST_CASE("multilabel head gradients match finite differences", "[hier][grad]") {
    fd_check_model(TaskKind::lsi, 41);
}

TEST_CASE("binary head gradients match finite differences", "[hier][grad]") {
    fd_check_model(TaskKind::cjpe, 42);
}

TEST_CASE("crf head gradients match finite differences", "[hier][grad]") {
    fd_check_model(TaskKind::seg, 43);
}

TEST_CASE("a zero encoder learning rate freezes the lower encoder exactly", "[hier]") {
    auto enc_config = micro_encoder(30);
    auto hier_config = micro_hier();
    auto model = HierModel<float>::create(TaskKind::lsi, 3, enc_config, hier_config,
                                          Parameters<float>::init(enc_config, 50), 51);
    auto before = cast_parameters<double>(model.encoder);

    std::vector<LabeledDoc> batch{labeled_doc(TaskKind::lsi, 3, 3, 52),
                                  labeled_doc(TaskKind::lsi, 3, 4, 53)};
    auto opt = OptimizerState<float>::init(model.trainable_tensors());
    std::map<std::string, double> lr_map{{"encoder", 0.0}, {"upper", 1e-3}, {"head", 1e-3}};
    finetune_step(model, batch, {1.0, 1.0, 1.0}, lr_map, opt, AdamWConfig{});

    auto after = cast_parameters<double>(model.encoder);
    auto ra = before.tensors();
    auto rb = after.tensors();
    bool upper_changed = false;
    for (std::size_t t = 0; t < ra.size(); ++t) {
        for (Eigen::Index i = 0; i < ra[t].size(); ++i) {
            REQUIRE(ra[t].data[i] == rb[t].data[i]);
        }
    }
    auto upper_refs = model.upper.tensors();
    for (const auto& t : upper_refs) {
        for (Eigen::Index i = 0; i < t.size(); ++i) {
            if (t.data[i] != 0.0f) upper_changed = true;
        }
    }
    REQUIRE(upper_changed);
}

TEST_CASE("a uniform lr map reduces to single-rate adamw", "[hier]") {
    auto enc_config = micro_encoder(30);
    auto hier_config = micro_hier();
    auto make_model = [&] {
        return HierModel<double>::create(TaskKind::cjpe, 1, enc_config, hier_config,
                                         Parameters<double>::init(enc_config, 60), 61);
    };
    auto model_a = make_model();
    auto model_b = make_model();
    std::vector<LabeledDoc> batch{labeled_doc(TaskKind::cjpe, 1, 3, 62)};

    AdamWConfig adamw;
    adamw.lr = 5e-4;
    auto opt_a = OptimizerState<double>::init(model_a.trainable_tensors());
    std::map<std::string, double> lr_map{{"encoder", 5e-4}, {"upper", 5e-4}, {"head", 5e-4}};
    finetune_step(model_a, batch, {1.0}, lr_map, opt_a, adamw);

    auto grads = model_b.zeros_like();
    doc_loss_and_grads(model_b, batch[0], {1.0}, &grads, 1.0);
    auto params = model_b.trainable_tensors();
    auto grad_refs = grads.trainable_tensors();
    auto opt_b = OptimizerState<double>::init(params);
    adamw_step(params, grad_refs, opt_b, adamw);

    auto ra = model_a.trainable_tensors();
    auto rb = model_b.trainable_tensors();
    for (std::size_t t = 0; t < ra.size(); ++t) {
        for (Eigen::Index i = 0; i < ra[t].size(); ++i) {
            REQUIRE(ra[t].data[i] == rb[t].data[i]);
        }
    }
}

TEST_CASE("a parameter group missing from the lr map is an error", "[hier]") {
    auto enc_config = micro_encoder(30);
    auto hier_config = micro_hier();
    auto model = HierModel<float>::create(TaskKind::lsi, 2, enc_config, hier_config,
                                          Parameters<float>::init(enc_config, 70), 71);
    std::vector<LabeledDoc> batch{labeled_doc(TaskKind::lsi, 2, 2, 72)};
    auto opt = OptimizerState<float>::init(model.trainable_tensors());
    std::map<std::string, double> lr_map{{"encoder", 1e-5}, {"upper", 1e-3}};
    REQUIRE_THROWS_WITH(finetune_step(model, batch, {1.0, 1.0}, lr_map, opt, AdamWConfig{}),
                        Catch::Matchers::ContainsSubstring("head"));
}
