#include "advrep/carl/carl.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "advrep/rng.hpp"

namespace advrep::carl {

void CarlConfig::validate() const {
    if (m < 1) throw std::invalid_argument("carl.m must be >= 1");
    if (!(temperature > 0.0)) throw std::invalid_argument("carl.temperature must be > 0");
    if (momentum < 0.0 || momentum > 1.0) throw std::invalid_argument("carl.momentum must be in [0, 1]");
}

void normalize(std::span<double> row) {
    const double n = nx::frobenius_norm(row);
    if (n == 0.0) throw std::domain_error("cannot normalize a zero representation");
    for (double& v : row) v /= n;
}

MemoryBank bank_init(const model::ModelParams& params, const data::Dataset& train,
                     const adversary::FreeLBConfig& freelb, double momentum, std::uint64_t seed) {
    const std::size_t n = train.examples.size();
    const std::size_t dh = params.config.hidden_dim;
    MemoryBank bank;
    bank.orig = Tensor::zeros({n, dh});
    bank.adv = Tensor::zeros({n, dh});
    bank.momentum = momentum;
    for (std::size_t i = 0; i < n; ++i) {
        const auto& ex = train.examples[i];
        auto rng = make_rng(seed, {kBankStream, ex.index});
        auto delta = adversary::freelb_perturbation(ex, params, freelb, rng);
        Tensor emb = model::embed(ex.token_ids, params);
        Tensor clean = model::encode(emb, ex.mask, params).sentence_rep;
        for (std::size_t k = 0; k < emb.size(); ++k) emb[k] += delta.values[k];
        Tensor adv = model::encode(emb, ex.mask, params).sentence_rep;
        std::copy(clean.values().begin(), clean.values().end(), bank.orig.row(i).begin());
        std::copy(adv.values().begin(), adv.values().end(), bank.adv.row(i).begin());
        normalize(bank.orig.row(i));
        normalize(bank.adv.row(i));
    }
    bank.initialized = true;
    return bank;
}

std::vector<double> momentum_mix(std::span<const double> old, std::span<const double> fresh, double momentum) {
    if (old.size() != fresh.size()) throw nx::ShapeError("momentum_mix: row lengths differ");
    std::vector<double> out(old.size());
    for (std::size_t k = 0; k < old.size(); ++k) out[k] = momentum * old[k] + (1.0 - momentum) * fresh[k];
    return out;
}

void bank_update(MemoryBank& bank, std::size_t i, std::span<const double> rep, std::span<const double> rep_adv) {
    if (!bank.initialized) throw std::logic_error("bank_update: bank not initialized");
    if (i >= bank.size()) {
        throw std::out_of_range("bank_update: index " + std::to_string(i) + " out of range for bank of " +
                                std::to_string(bank.size()));
    }
    auto write = [&](Tensor& b, std::span<const double> fresh) {
        auto row = b.row(i);
        auto mixed = momentum_mix(row, fresh, bank.momentum);
        std::copy(mixed.begin(), mixed.end(), row.begin());
        normalize(row);
    };
    write(bank.orig, rep);
    write(bank.adv, rep_adv);
}

namespace {

std::vector<std::size_t> draw(const std::vector<std::size_t>& pool, std::size_t anchor_label, std::size_t m,
                              std::mt19937_64& rng) {
    if (pool.size() < m) {
        throw std::invalid_argument("sample_negatives: class " + std::to_string(anchor_label) + " has only " +
                                    std::to_string(pool.size()) + " negatives, " + std::to_string(m) +
                                    " requested");
    }
    // Partial Fisher-Yates over a copy of the pool.
    std::vector<std::size_t> work = pool;
    for (std::size_t k = 0; k < m; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, work.size() - 1);
        std::swap(work[k], work[pick(rng)]);
    }
    work.resize(m);
    return work;
}

}  // namespace

std::vector<std::size_t> sample_negatives(std::span<const std::size_t> labels, std::size_t anchor_label,
                                          std::size_t m, std::mt19937_64& rng) {
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] != anchor_label) pool.push_back(i);
    }
    return draw(pool, anchor_label, m, rng);
}

NegativeSampler::NegativeSampler(std::span<const std::size_t> labels) {
    std::size_t classes = 0;
    for (auto l : labels) classes = std::max(classes, l + 1);
    pools_.resize(classes);
    for (std::size_t c = 0; c < classes; ++c) {
        for (std::size_t i = 0; i < labels.size(); ++i) {
            if (labels[i] != c) pools_[c].push_back(i);
        }
    }
}

std::size_t NegativeSampler::available(std::size_t anchor_label) const {
    return anchor_label < pools_.size() ? pools_[anchor_label].size() : 0;
}

std::vector<std::size_t> NegativeSampler::sample(std::size_t anchor_label, std::size_t m, std::mt19937_64& rng) const {
    static const std::vector<std::size_t> empty;
    return draw(anchor_label < pools_.size() ? pools_[anchor_label] : empty, anchor_label, m, rng);
}

double score(std::span<const double> x1, std::span<const double> x2, double temperature) {
    if (!(temperature > 0.0)) throw std::invalid_argument("score: temperature must be > 0");
    return std::exp(nx::dot(x1, x2) / temperature);
}

namespace {

// -log( exp(pos) / (sum_j exp(neg_j) [+ exp(pos)]) ) with logits already
// divided by the temperature.
double anchored(double pos, std::span<const double> neg, bool include_positive) {
    double mx = include_positive ? pos : -std::numeric_limits<double>::infinity();
    for (double v : neg) mx = std::max(mx, v);
    double total = include_positive ? std::exp(pos - mx) : 0.0;
    for (double v : neg) total += std::exp(v - mx);
    return mx + std::log(total) - pos;
}

void check_negatives(std::size_t dh, const Tensor& neg_orig, const Tensor& neg_adv) {
    if (neg_orig.rank() != 2 || neg_adv.rank() != 2 || neg_orig.cols() != dh || neg_adv.cols() != dh ||
        neg_orig.rows() != neg_adv.rows() || neg_orig.rows() == 0) {
        throw nx::ShapeError("contrastive_loss: negatives " + nx::shape_string(neg_orig.shape()) + " and " +
                             nx::shape_string(neg_adv.shape()) + " do not match representation width " +
                             std::to_string(dh));
    }
}

}  // namespace

ContrastiveParts contrastive_parts(std::span<const double> rep, std::span<const double> rep_adv,
                                   const Tensor& neg_orig, const Tensor& neg_adv, double temperature,
                                   bool include_positive) {
    if (!(temperature > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be > 0");
    if (rep.size() != rep_adv.size()) throw nx::ShapeError("contrastive_loss: anchor widths differ");
    check_negatives(rep.size(), neg_orig, neg_adv);
    const std::size_t m = neg_orig.rows();
    const double pos = nx::dot(rep_adv, rep) / temperature;
    std::vector<double> na(m), no(m);
    for (std::size_t j = 0; j < m; ++j) {
        na[j] = nx::dot(rep_adv, neg_orig.row(j)) / temperature;
        no[j] = nx::dot(rep, neg_adv.row(j)) / temperature;
    }
    return {anchored(pos, na, include_positive), anchored(pos, no, include_positive)};
}

double contrastive_loss(std::span<const double> rep, std::span<const double> rep_adv, const Tensor& neg_orig,
                        const Tensor& neg_adv, double temperature, bool include_positive) {
    return contrastive_parts(rep, rep_adv, neg_orig, neg_adv, temperature, include_positive).total();
}

Var contrastive_loss(Var rep, Var rep_adv, const Tensor& neg_orig, const Tensor& neg_adv, double temperature,
                     bool include_positive) {
    if (!(temperature > 0.0)) throw std::invalid_argument("contrastive_loss: temperature must be > 0");
    check_negatives(rep.value().cols(), neg_orig, neg_adv);
    nx::Tape& tape = *rep.tape;
    const double inv = 1.0 / temperature;
    Var pos_a = nx::scale(nx::matmul_bt(rep_adv, rep), inv);
    Var pos_o = nx::scale(nx::matmul_bt(rep, rep_adv), inv);
    Var neg_a = nx::scale(nx::matmul_bt(rep_adv, tape.constant_ref(neg_orig)), inv);
    Var neg_o = nx::scale(nx::matmul_bt(rep, tape.constant_ref(neg_adv)), inv);
    if (include_positive) {
        neg_a = nx::concat_cols(pos_a, neg_a);
        neg_o = nx::concat_cols(pos_o, neg_o);
    }
    Var la = nx::sub(nx::sum(nx::logsumexp_rows(neg_a)), nx::sum(pos_a));
    Var lo = nx::sub(nx::sum(nx::logsumexp_rows(neg_o)), nx::sum(pos_o));
    return nx::add(la, lo);
}

Tensor gather(const Tensor& bank, std::span<const std::size_t> idx) {
    Tensor out = Tensor::zeros({idx.size(), bank.cols()});
    for (std::size_t k = 0; k < idx.size(); ++k) {
        if (idx[k] >= bank.rows()) throw std::out_of_range("gather: bank index " + std::to_string(idx[k]));
        auto src = bank.row(idx[k]);
        std::copy(src.begin(), src.end(), out.row(k).begin());
    }
    return out;
}

}  // namespace advrep::carl
