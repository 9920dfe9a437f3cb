#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "advrep/eval/eval.hpp"

namespace advrep::eval {
namespace {

model::ModelConfig config(bool reconstructor = false) {
    return {.vocab_size = 12, .embed_dim = 6, .hidden_dim = 5, .num_classes = 2, .max_len = 6,
            .reconstructor = reconstructor};
}

data::Dataset balanced() {
    data::Dataset ds;
    ds.num_classes = 2;
    ds.examples = {{0, {2, 5, 9, 3, 0, 0}, {1, 1, 1, 1, 0, 0}, 0},
                   {1, {2, 7, 4, 0, 0, 0}, {1, 1, 1, 0, 0, 0}, 1},
                   {2, {2, 11, 6, 8, 10, 3}, {1, 1, 1, 1, 1, 1}, 0},
                   {3, {2, 4, 4, 5, 0, 0}, {1, 1, 1, 1, 0, 0}, 1}};
    return ds;
}

TEST(Accuracy, ConstantAndPerfectModels) {
    auto params = model::init_params(config(), 1);
    auto ds = balanced();
    for (double& v : params.classifier.values()) v = 0.0;
    EXPECT_EQ(accuracy(params, ds), 0.5);

    auto trained = model::init_params(config(), 2);
    for (auto& ex : ds.examples) ex.label = model::predict(trained, ex.token_ids, ex.mask);
    EXPECT_EQ(accuracy(trained, ds), 1.0);

    EXPECT_THROW(accuracy(trained, data::Dataset{}), std::invalid_argument);
}

TEST(RobustAccuracy, NullAttackEqualsClean) {
    auto params = model::init_params(config(), 3);
    auto ds = balanced();
    adversary::AttackConfig none{.k_steps = 0, .alpha = 0.1, .epsilon = 0.1, .gamma = 0.0};
    EXPECT_EQ(robust_accuracy(params, ds, none), accuracy(params, ds));
    auto rep = robustness_report(params, ds, none);
    EXPECT_EQ(rep.robust_accuracy, rep.clean_accuracy);
    EXPECT_EQ(rep.mean_euclidean, 0.0);
    EXPECT_NEAR(rep.mean_cosine, 1.0, 1e-12);
}

TEST(RepresentationDistance, BoundsAndDeterminism) {
    auto params = model::init_params(config(), 4);
    auto ds = balanced();
    adversary::AttackConfig attack{.k_steps = 3, .alpha = 0.5, .epsilon = 1.0, .gamma = 0.2, .seed = 7};
    auto a = representation_distance(params, ds, attack);
    auto b = representation_distance(params, ds, attack);
    EXPECT_EQ(a.mean_cosine, b.mean_cosine);
    EXPECT_EQ(a.mean_euclidean, b.mean_euclidean);
    EXPECT_GE(a.mean_cosine, -1.0);
    EXPECT_LE(a.mean_cosine, 1.0);
    EXPECT_GT(a.mean_euclidean, 0.0);
    EXPECT_EQ(a.counted + a.skipped, ds.size());

    auto rep = robustness_report(params, ds, attack);
    EXPECT_EQ(rep.mean_cosine, a.mean_cosine);
    EXPECT_EQ(rep.mean_euclidean, a.mean_euclidean);
    EXPECT_EQ(rep.robust_accuracy, robust_accuracy(params, ds, attack));
}

TEST(PerTokenNorms, Properties) {
    std::vector<int> mask{1, 1, 1, 0};
    auto zero = adversary::zero_delta(4, 3, mask);
    for (double v : per_token_perturbation_norms(zero)) EXPECT_EQ(v, 0.0);

    std::mt19937_64 rng(5);
    auto d = adversary::init_perturbation(4, 3, 0.8, mask, rng);
    auto norms = per_token_perturbation_norms(d);
    double sq = 0.0;
    for (double v : norms) sq += v * v;
    EXPECT_NEAR(sq, d.norm() * d.norm(), 1e-14);
    EXPECT_EQ(norms[3], 0.0);

    adversary::Delta swapped = d;
    std::swap_ranges(swapped.values.row(0).begin(), swapped.values.row(0).end(), swapped.values.row(3).begin());
    std::swap(swapped.mask[0], swapped.mask[3]);
    auto pnorms = per_token_perturbation_norms(swapped);
    EXPECT_EQ(pnorms[0], norms[3]);
    EXPECT_EQ(pnorms[3], norms[0]);
    EXPECT_EQ(pnorms[1], norms[1]);
}

TEST(Reconstruct, LengthAndShape) {
    auto params = model::init_params(config(true), 6);
    auto ds = balanced();
    std::vector<std::string> words;
    for (int i = 0; i < 9; ++i) words.push_back("t" + std::to_string(i));
    data::Vocabulary vocab(words);
    adversary::AttackConfig attack{.k_steps = 2, .alpha = 0.1, .epsilon = 0.1};
    for (const auto& ex : ds.examples) {
        std::size_t expect = 0;
        for (std::size_t i = 1; i < ex.mask.size(); ++i) expect += ex.mask[i] != 0;
        EXPECT_EQ(reconstruct_text(params, ex, attack, vocab).size(), expect);
    }
    auto lines = reconstruct_dataset(params, ds, attack, vocab);
    ASSERT_EQ(lines.size(), ds.size());
    for (const auto& l : lines) {
        auto tsv = l.tsv();
        EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\t'), 1);
    }

    auto baseline = model::init_params(config(), 7);
    lines = reconstruct_dataset(params, ds, attack, vocab, &baseline);
    for (const auto& l : lines) {
        auto tsv = l.tsv();
        EXPECT_EQ(std::count(tsv.begin(), tsv.end(), '\t'), 3);
    }

    double acc = reconstruction_accuracy(params, ds);
    EXPECT_GE(acc, 0.0);
    EXPECT_LE(acc, 1.0);
    EXPECT_THROW(reconstruct_text(model::init_params(config(), 1), ds.examples[0], attack, vocab), std::logic_error);
}

TEST(Report, CsvAndText) {
    EXPECT_EQ(RobustnessReport::csv_header(), "clean_acc,robust_acc,mean_cos,mean_euc");
    RobustnessReport r;
    r.clean_accuracy = 0.75;
    r.robust_accuracy = 0.5;
    r.mean_cosine = 0.9;
    r.mean_euclidean = 1.25;
    EXPECT_EQ(r.csv_row(), "0.750000,0.500000,0.900000,1.250000");
    EXPECT_NE(r.text().find("robust accuracy"), std::string::npos);
}

}  // namespace
}  // namespace advrep::eval
