#include "advrep/eval/eval.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>
#include <stdexcept>

namespace advrep::eval {

namespace {

void require_examples(const data::Dataset& dataset, const char* op) {
    if (dataset.empty()) throw std::invalid_argument(std::string(op) + ": empty dataset");
}

model::EncodedExample encode_at(const ModelParams& params, const data::TokenizedExample& ex, const nx::Tensor* delta) {
    nx::Tensor emb = model::embed(ex.token_ids, params);
    if (delta != nullptr) {
        nx::require_same_shape(emb, *delta, "encode_at");
        for (std::size_t k = 0; k < emb.size(); ++k) emb[k] += (*delta)[k];
    }
    return model::encode(emb, ex.mask, params);
}

std::size_t argmax(std::span<const double> v) {
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.6f", v);
    return buf;
}

}  // namespace

double accuracy(const ModelParams& params, const data::Dataset& dataset) {
    require_examples(dataset, "accuracy");
    std::size_t hits = 0;
    for (const auto& ex : dataset.examples) hits += model::predict(params, ex.token_ids, ex.mask) == ex.label;
    return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

double robust_accuracy(const ModelParams& params, const data::Dataset& dataset, const adversary::AttackConfig& attack) {
    require_examples(dataset, "robust_accuracy");
    std::size_t hits = 0;
    for (const auto& ex : dataset.examples) {
        auto delta = adversary::kpgd_attack(ex, params, attack);
        hits += model::predict(params, ex.token_ids, ex.mask, &delta.values) == ex.label;
    }
    return static_cast<double>(hits) / static_cast<double>(dataset.size());
}

namespace {

// Adds one example's clean/attacked pair to running sums; false if skipped.
bool add_distance(std::span<const double> r, std::span<const double> ra, double& cos_sum, double& euc_sum) {
    const double nr = nx::frobenius_norm(r), na = nx::frobenius_norm(ra);
    if (nr == 0.0 || na == 0.0) return false;
    double c = nx::dot(r, ra) / (nr * na);
    cos_sum += std::clamp(c, -1.0, 1.0);
    double sq = 0.0;
    for (std::size_t k = 0; k < r.size(); ++k) sq += (r[k] - ra[k]) * (r[k] - ra[k]);
    euc_sum += std::sqrt(sq);
    return true;
}

}  // namespace

Distance representation_distance(const ModelParams& params, const data::Dataset& dataset,
                                 const adversary::AttackConfig& attack) {
    require_examples(dataset, "representation_distance");
    double cos_sum = 0.0, euc_sum = 0.0;
    Distance out;
    for (const auto& ex : dataset.examples) {
        auto delta = adversary::kpgd_attack(ex, params, attack);
        auto clean = encode_at(params, ex, nullptr);
        auto adv = encode_at(params, ex, &delta.values);
        if (add_distance(clean.sentence_rep.values(), adv.sentence_rep.values(), cos_sum, euc_sum)) {
            ++out.counted;
        } else {
            ++out.skipped;
        }
    }
    if (out.counted > 0) {
        out.mean_cosine = cos_sum / static_cast<double>(out.counted);
        out.mean_euclidean = euc_sum / static_cast<double>(out.counted);
    }
    return out;
}

std::vector<double> per_token_perturbation_norms(const adversary::Delta& delta) {
    std::vector<double> out(delta.values.rows(), 0.0);
    for (std::size_t i = 0; i < out.size(); ++i) {
        if (delta.mask.at(i)) out[i] = nx::frobenius_norm(delta.values.row(i));
    }
    return out;
}

namespace {

std::vector<std::size_t> reconstruct_ids(const ModelParams& params, const data::TokenizedExample& ex,
                                         const nx::Tensor* delta) {
    auto enc = encode_at(params, ex, delta);
    nx::Tensor logits = model::reconstruct_logits(enc.token_hidden, params);
    auto keep = model::reconstruction_mask(ex.mask);
    std::vector<std::size_t> ids;
    for (std::size_t i = 0; i < keep.size(); ++i) {
        if (keep[i]) ids.push_back(argmax(logits.row(i)));
    }
    return ids;
}

}  // namespace

std::vector<std::string> reconstruct_text(const ModelParams& params, const data::TokenizedExample& example,
                                          const adversary::AttackConfig& attack, const data::Vocabulary& vocab) {
    auto delta = adversary::kpgd_attack(example, params, attack);
    std::vector<std::string> out;
    for (auto id : reconstruct_ids(params, example, &delta.values)) out.push_back(vocab.token(id));
    return out;
}

double reconstruction_accuracy(const ModelParams& params, const data::Dataset& dataset) {
    require_examples(dataset, "reconstruction_accuracy");
    std::size_t hits = 0, total = 0;
    for (const auto& ex : dataset.examples) {
        auto ids = reconstruct_ids(params, ex, nullptr);
        auto keep = model::reconstruction_mask(ex.mask);
        std::size_t k = 0;
        for (std::size_t i = 0; i < keep.size(); ++i) {
            if (!keep[i]) continue;
            hits += ids[k++] == ex.token_ids[i];
            ++total;
        }
    }
    if (total == 0) throw std::invalid_argument("reconstruction_accuracy: no positions to score");
    return static_cast<double>(hits) / static_cast<double>(total);
}

std::string RobustnessReport::csv_header() { return "clean_acc,robust_acc,mean_cos,mean_euc"; }

std::string RobustnessReport::csv_row() const {
    return fmt(clean_accuracy) + "," + fmt(robust_accuracy) + "," + fmt(mean_cosine) + "," + fmt(mean_euclidean);
}

std::string RobustnessReport::text() const {
    std::ostringstream os;
    os << "attack         k=" << attack.k_steps << " alpha=" << attack.alpha << " epsilon=" << attack.epsilon
       << " gamma=" << attack.gamma << " seed=" << attack.seed << "\n"
       << "examples       " << examples << " (" << skipped << " skipped for distance)\n"
       << "clean accuracy " << fmt(clean_accuracy) << "\n"
       << "robust accuracy " << fmt(robust_accuracy) << "\n"
       << "mean cosine    " << fmt(mean_cosine) << "\n"
       << "mean euclidean " << fmt(mean_euclidean) << "\n";
    return os.str();
}

RobustnessReport robustness_report(const ModelParams& params, const data::Dataset& dataset,
                                   const adversary::AttackConfig& attack) {
    require_examples(dataset, "robustness_report");
    RobustnessReport rep;
    rep.attack = attack;
    rep.examples = dataset.size();
    std::size_t clean_hits = 0, robust_hits = 0, counted = 0;
    double cos_sum = 0.0, euc_sum = 0.0;
    for (const auto& ex : dataset.examples) {
        auto delta = adversary::kpgd_attack(ex, params, attack);
        auto clean = encode_at(params, ex, nullptr);
        auto adv = encode_at(params, ex, &delta.values);
        clean_hits += argmax(model::classify(clean.sentence_rep, params).values()) == ex.label;
        robust_hits += argmax(model::classify(adv.sentence_rep, params).values()) == ex.label;
        if (add_distance(clean.sentence_rep.values(), adv.sentence_rep.values(), cos_sum, euc_sum)) {
            ++counted;
        } else {
            ++rep.skipped;
        }
    }
    const double n = static_cast<double>(dataset.size());
    rep.clean_accuracy = static_cast<double>(clean_hits) / n;
    rep.robust_accuracy = static_cast<double>(robust_hits) / n;
    if (counted > 0) {
        rep.mean_cosine = cos_sum / static_cast<double>(counted);
        rep.mean_euclidean = euc_sum / static_cast<double>(counted);
    }
    return rep;
}

std::string ReconstructionLine::tsv() const {
    std::string out = original + "\t" + reconstructed;
    if (pred_orig) out += "\t" + std::to_string(*pred_orig);
    if (pred_recon) out += "\t" + std::to_string(*pred_recon);
    return out;
}

std::vector<ReconstructionLine> reconstruct_dataset(const ModelParams& params, const data::Dataset& dataset,
                                                    const adversary::AttackConfig& attack,
                                                    const data::Vocabulary& vocab, const ModelParams* baseline) {
    std::vector<ReconstructionLine> out;
    const std::size_t max_len = params.config.max_len;
    for (const auto& ex : dataset.examples) {
        ReconstructionLine line;
        line.original = data::detokenize({ex.token_ids, ex.mask}, vocab);
        auto tokens = reconstruct_text(params, ex, attack, vocab);
        for (std::size_t k = 0; k < tokens.size(); ++k) line.reconstructed += (k ? " " : "") + tokens[k];
        if (baseline != nullptr) {
            line.pred_orig = model::predict(*baseline, ex.token_ids, ex.mask);
            auto recon = data::tokenize(line.reconstructed, vocab, max_len);
            line.pred_recon = model::predict(*baseline, recon.ids, recon.mask);
        }
        out.push_back(std::move(line));
    }
    return out;
}

}  // namespace advrep::eval
