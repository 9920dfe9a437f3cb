#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <random>
#include <vector>

#include <gtest/gtest.h>

#include "advrep/model/checkpoint.hpp"
#include "advrep/model/model.hpp"
#include "advrep/numerics/finite_diff.hpp"

namespace advrep::model {
namespace {

ModelConfig small_config(bool reconstructor = true) {
    return ModelConfig{.vocab_size = 12, .embed_dim = 4, .hidden_dim = 5, .num_classes = 3, .max_len = 6,
                       .reconstructor = reconstructor};
}

// Scale weights up from the tiny init so gradients are not all ~1e-6.
ModelParams lively_params(const ModelConfig& config, std::uint64_t seed) {
    ModelParams p = init_params(config, seed);
    std::mt19937_64 rng(seed + 100);
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (auto& nt : p.tensors()) {
        for (double& v : nt.tensor->values()) v = dist(rng);
    }
    return p;
}

TEST(InitParams, DeterministicAndInRange) {
    auto config = small_config();
    auto a = init_params(config, 42);
    auto b = init_params(config, 42);
    auto c = init_params(config, 43);
    EXPECT_EQ(a, b);
    EXPECT_NE(a, c);
    for (const Tensor* w : {&a.embedding, &a.position, &a.w_query, &a.w_key, &a.w_value, &a.ff_weight,
                            &a.classifier, &a.recon_weight}) {
        for (double v : w->values()) EXPECT_LE(std::abs(v), 0.05);
    }
    for (double v : a.ff_bias.values()) EXPECT_EQ(v, 0.0);
    for (double v : a.recon_bias.values()) EXPECT_EQ(v, 0.0);
}

TEST(Embed, PadRowsAreEmbeddedWithPosition) {
    auto p = init_params(small_config(), 1);
    std::vector<std::size_t> ids(6, 0);
    Tensor out = embed(ids, p);
    for (std::size_t pos = 0; pos < 6; ++pos) {
        for (std::size_t j = 0; j < 4; ++j) EXPECT_EQ(out.at(pos, j), p.embedding.at(0, j) + p.position.at(pos, j));
    }
    std::vector<std::size_t> bad{2, 12};
    EXPECT_THROW(embed(bad, p), std::out_of_range);
}

TEST(Embed, GatherAdjointCountsOccurrences) {
    auto p = init_params(small_config(), 2);
    const std::vector<std::size_t> ids{2, 7, 5, 7};
    nx::Tape tape;
    Graph g(tape, p);
    auto loss = nx::sum(g.embed(ids));
    auto grads = g.gradients(tape.backward(loss, g.leaves()));
    const Tensor& ge = grads[0];
    for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_EQ(ge.at(2, j), 1.0);
        EXPECT_EQ(ge.at(5, j), 1.0);
        EXPECT_EQ(ge.at(7, j), 2.0);
        EXPECT_EQ(ge.at(3, j), 0.0);
    }
    auto fd = nx::finite_difference_grad(
        [&](const Tensor& e) {
            ModelParams q = p;
            q.embedding = e;
            double s = 0.0;
            Tensor out = embed(ids, q);
            for (double v : out.values()) s += v;
            return s;
        },
        p.embedding);
    EXPECT_LT(nx::max_relative_error(ge, fd), 1e-6);
}

TEST(Encode, PermutingTokensPermutesHiddenRows) {
    auto config = small_config();
    auto p = lively_params(config, 3);
    std::vector<std::size_t> ids{2, 4, 9, 6, 0, 0};
    std::vector<int> mask{1, 1, 1, 1, 0, 0};
    Tensor x = embed(ids, p);
    auto base = encode(x, mask, p);

    // Swap positions 1 and 3: token, mask entry and positional row all move.
    Tensor swapped = x;
    for (std::size_t j = 0; j < config.embed_dim; ++j) std::swap(swapped.at(1, j), swapped.at(3, j));
    auto perm = encode(swapped, mask, p);
    for (std::size_t j = 0; j < config.hidden_dim; ++j) {
        EXPECT_NEAR(perm.token_hidden.at(1, j), base.token_hidden.at(3, j), 1e-12);
        EXPECT_NEAR(perm.token_hidden.at(3, j), base.token_hidden.at(1, j), 1e-12);
        EXPECT_NEAR(perm.token_hidden.at(0, j), base.token_hidden.at(0, j), 1e-12);
    }
}

TEST(Encode, MaskedOutPositionsDoNotReachCls) {
    auto p = lively_params(small_config(), 4);
    std::vector<std::size_t> ids{2, 4, 9, 0, 0, 0};
    std::vector<int> mask{1, 1, 1, 0, 0, 0};
    Tensor x = embed(ids, p);
    auto base = encode(x, mask, p);
    Tensor changed = x;
    for (std::size_t j = 0; j < 4; ++j) changed.at(4, j) += 37.0;
    auto after = encode(changed, mask, p);
    for (std::size_t j = 0; j < 5; ++j) EXPECT_NEAR(after.sentence_rep[j], base.sentence_rep[j], 1e-12);
    for (std::size_t j = 0; j < 5; ++j) EXPECT_EQ(base.sentence_rep[j], base.token_hidden.at(0, j));

    std::vector<int> no_cls{0, 1, 1, 0, 0, 0};
    EXPECT_THROW(encode(x, no_cls, p), std::invalid_argument);
}

TEST(Encode, FiniteOnLargeInputs) {
    auto p = lively_params(small_config(), 5);
    std::mt19937_64 rng(5);
    std::uniform_real_distribution<double> dist(-10, 10);
    Tensor x = Tensor::zeros({6, 4});
    for (double& v : x.values()) v = dist(rng);
    std::vector<int> mask{1, 1, 1, 1, 1, 0};
    auto enc = encode(x, mask, p);
    EXPECT_TRUE(nx::all_finite(enc.token_hidden));
}

TEST(Classify, ProbabilityContract) {
    auto p = lively_params(small_config(), 6);
    Tensor rep = Tensor::vector({0.3, -1.2, 2.0, 0.1, 0.7});
    Tensor probs = classify(rep, p);
    double total = 0.0;
    for (double v : probs.values()) total += v;
    EXPECT_NEAR(total, 1.0, 1e-12);

    ModelParams doubled = p;
    for (double& v : doubled.classifier.values()) v *= 2.0;
    Tensor probs2 = classify(rep, doubled);
    auto argmax = [](const Tensor& t) {
        return std::max_element(t.values().begin(), t.values().end()) - t.values().begin();
    };
    EXPECT_EQ(argmax(probs), argmax(probs2));

    ModelParams zero = p;
    zero.classifier = Tensor::zeros(zero.classifier.shape());
    Tensor uniform = classify(rep, zero);
    for (double v : uniform.values()) EXPECT_NEAR(v, 1.0 / 3.0, 1e-15);
}

TEST(Reconstruct, ShapeAndRowwiseDeterminism) {
    auto p = lively_params(small_config(), 7);
    Tensor h = Tensor::zeros({6, 5});
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> dist(-1, 1);
    for (double& v : h.values()) v = dist(rng);
    for (std::size_t j = 0; j < 5; ++j) h.at(4, j) = h.at(2, j);
    Tensor logits = reconstruct_logits(h, p);
    EXPECT_EQ(logits.shape(), (nx::Shape{6, 12}));
    for (std::size_t v = 0; v < 12; ++v) EXPECT_EQ(logits.at(4, v), logits.at(2, v));
}

TEST(Reconstruct, TiedEmbeddingGetsGradientThroughBothPaths) {
    auto p = lively_params(small_config(), 8);
    const std::vector<std::size_t> ids{2, 5, 9, 0, 0, 0};
    const std::vector<int> mask{1, 1, 1, 0, 0, 0};

    // Second binding of the same weights so each path gets its own leaf.
    ModelParams head_copy = p;
    nx::Tape tape;
    Graph input_side(tape, p);
    Graph output_side(tape, head_copy);
    auto enc = input_side.encode(input_side.embed(ids), mask);
    auto loss = reconstruction_loss(output_side.reconstruct_logits(enc.token_hidden), ids, mask);
    std::vector<Var> leaves{input_side.leaves()[0], output_side.leaves()[0]};
    auto grads = tape.backward(loss, leaves);
    EXPECT_GT(nx::frobenius_norm(grads.at(leaves[0]).values()), 1e-6);
    EXPECT_GT(nx::frobenius_norm(grads.at(leaves[1]).values()), 1e-6);

    nx::Tape tied_tape;
    Graph g(tied_tape, p);
    auto tied_enc = g.encode(g.embed(ids), mask);
    auto tied_loss = reconstruction_loss(g.reconstruct_logits(tied_enc.token_hidden), ids, mask);
    Tensor combined = g.gradients(tied_tape.backward(tied_loss, g.leaves()))[0];

    auto fd = nx::finite_difference_grad(
        [&](const Tensor& e) {
            ModelParams q = p;
            q.embedding = e;
            auto h = encode(embed(ids, q), mask, q);
            return reconstruction_loss(reconstruct_logits(h.token_hidden, q), ids, mask);
        },
        p.embedding);
    EXPECT_LT(nx::norm_relative_error(combined, fd), 1e-6);

    Tensor summed = grads.at(leaves[0]);
    for (std::size_t i = 0; i < summed.size(); ++i) summed[i] += grads.at(leaves[1])[i];
    EXPECT_LT(nx::max_relative_error(summed, combined), 1e-12);
}

TEST(ReconstructionLoss, Examples) {
    const std::vector<std::size_t> ids{2, 5, 9, 0};
    const std::vector<int> mask{1, 1, 1, 0};
    EXPECT_NEAR(reconstruction_loss(Tensor::zeros({4, 12}), ids, mask), std::log(12.0), 1e-12);

    Tensor saturated = Tensor::filled({4, 12}, -1000.0);
    for (std::size_t pos = 0; pos < 4; ++pos) saturated.at(pos, ids[pos]) = 1000.0;
    EXPECT_NEAR(reconstruction_loss(saturated, ids, mask), 0.0, 1e-12);

    Tensor cls_changed = saturated;
    for (std::size_t v = 0; v < 12; ++v) cls_changed.at(0, v) = static_cast<double>(v) * 3.0;
    EXPECT_EQ(reconstruction_loss(cls_changed, ids, mask), reconstruction_loss(saturated, ids, mask));

    const std::vector<int> only_cls{1, 0, 0, 0};
    EXPECT_THROW(reconstruction_loss(saturated, ids, only_cls), std::invalid_argument);
}

TEST(ParamCount, HandSummedInventory) {
    ModelConfig base{.vocab_size = 200, .embed_dim = 32, .hidden_dim = 32, .num_classes = 2, .max_len = 16};
    ModelConfig rar = base;
    rar.reconstructor = true;
    // E, P, Wq/Wk/Wv, FF weight + bias, encoder norm gain + bias, classifier.
    const std::size_t base_expected = 200 * 32 + 16 * 32 + 3 * 32 * 32 + 32 * 32 + 32 + 2 * 32 + 2 * 32;
    // FF1 weight + bias, norm gain + bias; projection is E itself.
    const std::size_t head_expected = 32 * 32 + 32 + 2 * 32;
    EXPECT_EQ(param_count(init_params(base, 0)), base_expected);
    EXPECT_EQ(param_count(init_params(rar, 0)), base_expected + head_expected);
    EXPECT_GT(param_count(init_params(rar, 0)), param_count(init_params(base, 0)));

    ModelConfig wide = rar;
    wide.vocab_size = 400;
    EXPECT_EQ(param_count(init_params(wide, 0)) - param_count(init_params(rar, 0)), 200u * 32u);
}

TEST(WeightTying, UpdatingEmbeddingMovesReconstructionLogits) {
    auto p = lively_params(small_config(), 9);
    Tensor h = Tensor::filled({6, 5}, 0.25);
    h.at(1, 2) = -1.0;
    Tensor before = reconstruct_logits(h, p);
    p.embedding.at(3, 1) += 0.5;
    Tensor after = reconstruct_logits(h, p);
    for (std::size_t pos = 0; pos < 6; ++pos) {
        EXPECT_NE(after.at(pos, 3), before.at(pos, 3));
        EXPECT_EQ(after.at(pos, 4), before.at(pos, 4));
    }
}

TEST(EndToEnd, ClassificationGradientMatchesFiniteDifferences) {
    auto p = lively_params(small_config(), 10);
    for (double& v : p.embedding.values()) v *= 0.3;
    const std::vector<std::size_t> ids{2, 5, 9, 4, 0, 0};
    const std::vector<int> mask{1, 1, 1, 1, 0, 0};
    const std::size_t label = 1;
    auto loss_of = [&](const ModelParams& q) {
        nx::Tape tape;
        Graph g(tape, q);
        auto enc = g.encode(g.embed(ids), mask);
        return classification_loss(g.class_logits(enc.sentence_rep), label).value().item();
    };
    nx::Tape tape;
    Graph g(tape, p);
    auto enc = g.encode(g.embed(ids), mask);
    auto loss = classification_loss(g.class_logits(enc.sentence_rep), label);
    auto grads = g.gradients(tape.backward(loss, g.leaves()));

    auto names = p.tensors();
    for (std::size_t k = 0; k < names.size(); ++k) {
        auto fd = nx::finite_difference_grad(
            [&](const Tensor& probe) {
                ModelParams q = p;
                *q.tensors()[k].tensor = probe;
                return loss_of(q);
            },
            *names[k].tensor);
        EXPECT_LT(nx::norm_relative_error(grads[k], fd), 1e-4) << names[k].name;
    }
}

TEST(Checkpoint, BitExactRoundTrip) {
    auto p = lively_params(small_config(), 11);
    p.embedding.at(0, 0) = 1.0 / 3.0;
    auto path = std::filesystem::temp_directory_path() / "advrep_model_test.ckpt";
    save_model(path, p);
    auto q = load_model(path);
    EXPECT_EQ(p, q);
    std::filesystem::remove(path);

    auto base = init_params(small_config(false), 1);
    save_model(path, base);
    EXPECT_EQ(load_model(path), base);
    std::filesystem::remove(path);
}

TEST(Checkpoint, RejectsForeignFiles) {
    auto path = std::filesystem::temp_directory_path() / "advrep_not_a_ckpt.txt";
    {
        std::ofstream out(path);
        out << "hello\n";
    }
    EXPECT_THROW(load_model(path), CheckpointError);
    std::filesystem::remove(path);
}

}  // namespace
}  // namespace advrep::model
