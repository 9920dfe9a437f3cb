#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include <gtest/gtest.h>

#include "advrep/carl/carl.hpp"
#include "advrep/numerics/finite_diff.hpp"

namespace advrep::carl {
namespace {

std::vector<double> unit(std::size_t d, std::mt19937_64& rng) {
    std::normal_distribution<double> dist;
    std::vector<double> v(d);
    for (double& x : v) x = dist(rng);
    normalize(v);
    return v;
}

Tensor unit_rows(std::size_t m, std::size_t d, std::mt19937_64& rng) {
    Tensor t = Tensor::zeros({m, d});
    for (std::size_t j = 0; j < m; ++j) {
        auto r = unit(d, rng);
        std::copy(r.begin(), r.end(), t.row(j).begin());
    }
    return t;
}

// Eqs. as printed, with plain exp arithmetic.
double brute_force(const std::vector<double>& r, const std::vector<double>& ra, const Tensor& no, const Tensor& na,
                   double tau, bool include_positive) {
    auto s = [&](std::span<const double> a, std::span<const double> b) {
        double d = 0.0;
        for (std::size_t k = 0; k < a.size(); ++k) d += a[k] * b[k];
        return std::exp(d / tau);
    };
    double den_a = include_positive ? s(ra, r) : 0.0;
    double den_o = include_positive ? s(r, ra) : 0.0;
    for (std::size_t j = 0; j < no.rows(); ++j) {
        den_a += s(ra, no.row(j));
        den_o += s(r, na.row(j));
    }
    return -std::log(s(ra, r) / den_a) - std::log(s(r, ra) / den_o);
}

TEST(Score, Examples) {
    std::vector<double> x{1, 0}, y{0, 1};
    EXPECT_EQ(score(x, y, 0.3), 1.0);
    EXPECT_NEAR(score(x, x, 1.0), 2.718282, 1e-6);
    EXPECT_NEAR(score(x, x, 0.07), 1600320.1896405057, 1e-6);
}

TEST(ContrastiveLoss, HandExamples) {
    std::vector<double> a{1, 0, 0};
    Tensor same = Tensor::matrix(1, 3, {1, 0, 0});
    auto parts = contrastive_parts(a, a, same, same, 0.07);
    EXPECT_EQ(parts.anchored_adv, 0.0);
    EXPECT_EQ(parts.total(), 0.0);

    Tensor ortho = Tensor::matrix(2, 3, {0, 1, 0, 0, 0, 1});
    parts = contrastive_parts(a, a, ortho, ortho, 1.0);
    EXPECT_NEAR(parts.anchored_adv, std::log(2.0) - 1.0, 1e-15);
    EXPECT_NEAR(parts.anchored_adv, -0.30685, 1e-5);
}

TEST(ContrastiveLoss, MatchesBruteForceAtUnitTemperature) {
    std::mt19937_64 rng(21);
    for (std::size_t m : {1u, 2u, 5u, 50u}) {
        for (int trial = 0; trial < 25; ++trial) {
            auto r = unit(8, rng), ra = unit(8, rng);
            Tensor no = unit_rows(m, 8, rng), na = unit_rows(m, 8, rng);
            for (bool pos : {false, true}) {
                double fast = contrastive_loss(r, ra, no, na, 1.0, pos);
                double slow = brute_force(r, ra, no, na, 1.0, pos);
                EXPECT_NEAR(fast, slow, 1e-10 * std::max(1.0, std::abs(slow)));
            }
        }
    }
}

TEST(ContrastiveLoss, LogSpaceMatchesNaiveWhereNaiveIsFinite) {
    std::mt19937_64 rng(22);
    for (int trial = 0; trial < 50; ++trial) {
        auto r = unit(6, rng), ra = unit(6, rng);
        Tensor no = unit_rows(7, 6, rng), na = unit_rows(7, 6, rng);
        double fast = contrastive_loss(r, ra, no, na, 0.5);
        double slow = brute_force(r, ra, no, na, 0.5, false);
        EXPECT_LE(std::abs(fast - slow), 1e-10 * std::max(1.0, std::abs(slow)));
    }
    // Small temperature stays finite where naive exp would not.
    auto r = unit(6, rng);
    Tensor no = unit_rows(4, 6, rng);
    EXPECT_TRUE(std::isfinite(contrastive_loss(r, r, no, no, 1e-3)));
}

TEST(ContrastiveLoss, PermutationInvariantAndMonotone) {
    std::mt19937_64 rng(23);
    auto r = unit(5, rng), ra = unit(5, rng);
    Tensor no = unit_rows(6, 5, rng), na = unit_rows(6, 5, rng);
    const double base = contrastive_loss(r, ra, no, na, 0.07);
    Tensor pno = no, pna = na;
    std::vector<std::size_t> perm{3, 0, 5, 1, 4, 2};
    for (std::size_t j = 0; j < 6; ++j) {
        std::copy(no.row(perm[j]).begin(), no.row(perm[j]).end(), pno.row(j).begin());
        std::copy(na.row(perm[j]).begin(), na.row(perm[j]).end(), pna.row(j).begin());
    }
    EXPECT_NEAR(contrastive_loss(r, ra, pno, pna, 0.07), base, 1e-12);

    // L_D^a sees R only through the positive score; push R along R_adv.
    double prev = contrastive_parts(r, ra, no, na, 0.5).anchored_adv;
    for (int k = 1; k <= 10; ++k) {
        std::vector<double> closer(5);
        for (std::size_t i = 0; i < 5; ++i) closer[i] = r[i] + 0.2 * k * ra[i];
        const double now = contrastive_parts(closer, ra, no, na, 0.5).anchored_adv;
        EXPECT_LT(now, prev);
        prev = now;
    }
}

TEST(ContrastiveLoss, TapeVersionValueAndGradient) {
    std::mt19937_64 rng(24);
    Tensor no = unit_rows(4, 5, rng), na = unit_rows(4, 5, rng);
    for (bool pos : {false, true}) {
        Tensor r = Tensor::zeros({1, 5}), ra = Tensor::zeros({1, 5});
        auto u = unit(5, rng), v = unit(5, rng);
        std::copy(u.begin(), u.end(), r.data());
        std::copy(v.begin(), v.end(), ra.data());

        nx::Tape tape;
        Var vr = tape.leaf(r), vra = tape.leaf(ra);
        Var loss = contrastive_loss(vr, vra, no, na, 0.3, pos);
        EXPECT_NEAR(loss.value().item(), contrastive_loss(r.values(), ra.values(), no, na, 0.3, pos), 1e-12);
        auto grads = tape.backward(loss, {vr, vra});

        auto fd_r = nx::finite_difference_grad(
            [&](const Tensor& x) { return contrastive_loss(x.values(), ra.values(), no, na, 0.3, pos); }, r);
        auto fd_ra = nx::finite_difference_grad(
            [&](const Tensor& x) { return contrastive_loss(r.values(), x.values(), no, na, 0.3, pos); }, ra);
        EXPECT_LT(nx::max_relative_error(grads.at(vr), fd_r), 1e-6);
        EXPECT_LT(nx::max_relative_error(grads.at(vra), fd_ra), 1e-6);
    }
}

MemoryBank two_row_bank(double momentum) {
    MemoryBank b;
    b.orig = Tensor::matrix(2, 2, {1, 0, 0, 1});
    b.adv = Tensor::matrix(2, 2, {1, 0, 0, 1});
    b.momentum = momentum;
    b.initialized = true;
    return b;
}

TEST(BankUpdate, Examples) {
    std::vector<double> fresh{0, 1};
    auto mixed = momentum_mix(std::vector<double>{1, 0}, fresh, 0.5);
    EXPECT_EQ(mixed, (std::vector<double>{0.5, 0.5}));

    auto b = two_row_bank(0.5);
    bank_update(b, 0, fresh, fresh);
    EXPECT_NEAR(b.orig.at(0, 0), 0.7071067811865476, 1e-15);
    EXPECT_NEAR(b.orig.at(0, 1), 0.7071067811865476, 1e-15);
    EXPECT_EQ(b.orig.at(1, 1), 1.0);

    auto keep = two_row_bank(1.0);
    bank_update(keep, 0, fresh, fresh);
    EXPECT_EQ(keep.orig, two_row_bank(1.0).orig);

    auto replace = two_row_bank(0.0);
    std::vector<double> big{0, 3};
    bank_update(replace, 0, big, big);
    EXPECT_EQ(replace.adv.at(0, 0), 0.0);
    EXPECT_EQ(replace.adv.at(0, 1), 1.0);
}

TEST(BankUpdate, Errors) {
    auto b = two_row_bank(0.5);
    std::vector<double> r{1, 0};
    EXPECT_THROW(bank_update(b, 2, r, r), std::out_of_range);
    b.initialized = false;
    EXPECT_THROW(bank_update(b, 0, r, r), std::logic_error);
}

TEST(BankUpdate, TwoStepRecursionIsExact) {
    std::mt19937_64 rng(25);
    for (int trial = 0; trial < 100; ++trial) {
        MemoryBank b;
        b.orig = unit_rows(3, 4, rng);
        b.adv = unit_rows(3, 4, rng);
        b.momentum = std::uniform_real_distribution<double>(0, 1)(rng);
        b.initialized = true;
        auto r1 = unit(4, rng), r2 = unit(4, rng);
        std::vector<double> old(b.orig.row(1).begin(), b.orig.row(1).end());
        bank_update(b, 1, r1, r1);
        std::vector<double> expect = momentum_mix(old, r1, b.momentum);
        normalize(expect);
        std::vector<double> stored(b.orig.row(1).begin(), b.orig.row(1).end());
        EXPECT_EQ(stored, expect);
        bank_update(b, 1, r2, r2);
        expect = momentum_mix(expect, r2, b.momentum);
        normalize(expect);
        stored.assign(b.orig.row(1).begin(), b.orig.row(1).end());
        EXPECT_EQ(stored, expect);
    }
}

TEST(SampleNegatives, Contracts) {
    std::vector<std::size_t> labels{0, 1, 0, 1, 0, 1, 0, 1};
    std::mt19937_64 rng(26);
    auto neg = sample_negatives(labels, 0, 3, rng);
    ASSERT_EQ(neg.size(), 3u);
    EXPECT_EQ(std::set<std::size_t>(neg.begin(), neg.end()).size(), 3u);
    for (auto i : neg) EXPECT_EQ(labels[i], 1u);

    auto all = sample_negatives(labels, 1, 4, rng);
    EXPECT_EQ(std::set<std::size_t>(all.begin(), all.end()), (std::set<std::size_t>{0, 2, 4, 6}));

    std::mt19937_64 a(5), b(5);
    NegativeSampler sampler(labels);
    EXPECT_EQ(sample_negatives(labels, 0, 2, a), sampler.sample(0, 2, b));

    try {
        sample_negatives(labels, 1, 5, rng);
        FAIL() << "expected an error";
    } catch (const std::invalid_argument& e) {
        EXPECT_NE(std::string(e.what()).find("class 1"), std::string::npos) << e.what();
    }
}

TEST(SampleNegatives, Uniform) {
    std::vector<std::size_t> labels{0, 1, 1, 1, 1, 1};
    std::mt19937_64 rng(27);
    std::vector<int> hits(6, 0);
    const int trials = 20000;
    for (int t = 0; t < trials; ++t) {
        for (auto i : sample_negatives(labels, 0, 2, rng)) ++hits[i];
    }
    EXPECT_EQ(hits[0], 0);
    for (std::size_t i = 1; i < 6; ++i) EXPECT_NEAR(hits[i] / double(trials), 0.4, 0.02);
}

data::Dataset tiny_dataset() {
    data::Dataset ds;
    ds.num_classes = 2;
    ds.examples = {{0, {2, 5, 9, 13, 0, 0}, {1, 1, 1, 1, 0, 0}, 0},
                   {1, {2, 7, 4, 0, 0, 0}, {1, 1, 1, 0, 0, 0}, 1},
                   {2, {2, 11, 12, 8, 6, 3}, {1, 1, 1, 1, 1, 1}, 1}};
    return ds;
}

model::ModelConfig tiny_config() {
    return {.vocab_size = 16, .embed_dim = 6, .hidden_dim = 5, .num_classes = 2, .max_len = 6};
}

TEST(BankInit, UnitRowsAndDeterminism) {
    auto params = model::init_params(tiny_config(), 1);
    auto ds = tiny_dataset();
    adversary::FreeLBConfig cfg{.gamma = 0.6, .alpha = 0.1, .epsilon = 0.0, .n_steps = 2};
    auto a = bank_init(params, ds, cfg, 0.5, 9);
    auto b = bank_init(params, ds, cfg, 0.5, 9);
    EXPECT_TRUE(a.initialized);
    EXPECT_EQ(a.orig, b.orig);
    EXPECT_EQ(a.adv, b.adv);
    for (std::size_t i = 0; i < 3; ++i) {
        EXPECT_NEAR(nx::frobenius_norm(a.orig.row(i)), 1.0, 1e-10);
        EXPECT_NEAR(nx::frobenius_norm(a.adv.row(i)), 1.0, 1e-10);
    }
}

TEST(BankInit, SingleCleanStepMatchesHandDrivenAscent) {
    auto params = model::init_params(tiny_config(), 2);
    auto ds = tiny_dataset();
    adversary::FreeLBConfig cfg{.gamma = 0.0, .alpha = 0.1, .epsilon = 0.0, .n_steps = 1};
    auto bank = bank_init(params, ds, cfg, 0.5, 3);
    for (std::size_t i = 0; i < 3; ++i) {
        const auto& ex = ds.examples[i];
        auto zero = adversary::zero_delta(6, 6, ex.mask);
        auto fwd = adversary::adversarial_loss_and_grads(ex, params, zero.values, false);
        auto delta = adversary::ascent_step(zero, fwd.delta_grad, cfg.alpha, cfg.epsilon);
        Tensor emb = model::embed(ex.token_ids, params);
        for (std::size_t k = 0; k < emb.size(); ++k) emb[k] += delta.values[k];
        Tensor rep = model::encode(emb, ex.mask, params).sentence_rep;
        normalize(rep.values());
        for (std::size_t k = 0; k < 5; ++k) EXPECT_EQ(bank.adv.at(i, k), rep[k]);
    }
}

}  // namespace
}  // namespace advrep::carl
