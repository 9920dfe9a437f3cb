#pragma once

#include <cstddef>
#include <optional>
#include <string>
#include <vector>

#include "advrep/adversary/adversary.hpp"
#include "advrep/data/data.hpp"
#include "advrep/model/model.hpp"

namespace advrep::eval {

using model::ModelParams;

/// Fraction of examples whose argmax class equals the label.
double accuracy(const ModelParams& params, const data::Dataset& dataset);

/// Accuracy with every example classified at E + kpgd_attack(example).
double robust_accuracy(const ModelParams& params, const data::Dataset& dataset, const adversary::AttackConfig& attack);

struct Distance {
    double mean_cosine = 1.0;
    double mean_euclidean = 0.0;
    std::size_t counted = 0;
    std::size_t skipped = 0;  // zero-norm representations
};

/// Cosine and Euclidean distance between raw clean and attacked sentence
/// representations, averaged over the dataset.
Distance representation_distance(const ModelParams& params, const data::Dataset& dataset,
                                 const adversary::AttackConfig& attack);

/// L2 norm of every delta row; masked-out rows report 0.
std::vector<double> per_token_perturbation_norms(const adversary::Delta& delta);

/// Argmax reconstruction at every masked-in non-CLS position after a k-PGD
/// attack, mapped back to tokens.
std::vector<std::string> reconstruct_text(const ModelParams& params, const data::TokenizedExample& example,
                                          const adversary::AttackConfig& attack, const data::Vocabulary& vocab);

/// Fraction of masked-in non-CLS positions whose unperturbed reconstruction
/// argmax equals the input token.
double reconstruction_accuracy(const ModelParams& params, const data::Dataset& dataset);

struct RobustnessReport {
    double clean_accuracy = 0.0;
    double robust_accuracy = 0.0;
    double mean_cosine = 1.0;
    double mean_euclidean = 0.0;
    std::size_t examples = 0;
    std::size_t skipped = 0;
    adversary::AttackConfig attack;

    static std::string csv_header();  // clean_acc,robust_acc,mean_cos,mean_euc
    std::string csv_row() const;
    std::string text() const;
};

/// Clean accuracy, robust accuracy and distances from one attack per example.
RobustnessReport robustness_report(const ModelParams& params, const data::Dataset& dataset,
                                   const adversary::AttackConfig& attack);

/// One Table-6-style line: original, reconstructed, and optionally a baseline
/// model's predictions on both.
struct ReconstructionLine {
    std::string original;
    std::string reconstructed;
    std::optional<std::size_t> pred_orig;
    std::optional<std::size_t> pred_recon;

    std::string tsv() const;
};

/// Reconstruct every example of a dataset. With a baseline model the
/// prediction columns are filled from it.
std::vector<ReconstructionLine> reconstruct_dataset(const ModelParams& params, const data::Dataset& dataset,
                                                    const adversary::AttackConfig& attack,
                                                    const data::Vocabulary& vocab,
                                                    const ModelParams* baseline = nullptr);

}  // namespace advrep::eval
