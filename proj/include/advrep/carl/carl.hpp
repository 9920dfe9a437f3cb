#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <vector>

#include "advrep/adversary/adversary.hpp"
#include "advrep/data/data.hpp"
#include "advrep/model/model.hpp"

namespace advrep::carl {

using nx::Tensor;
using nx::Var;

struct CarlConfig {
    std::size_t m = 128;        // sampled negatives per anchor
    double temperature = 0.07;
    double momentum = 0.5;
    std::size_t start_step = 0;  // L_D is active from this step on
    bool include_positive_in_denominator = false;

    void validate() const;
};

/// Two N x d_h stores of unit-norm sentence representations, one for clean
/// inputs and one for their adversarial counterparts.
struct MemoryBank {
    Tensor orig;
    Tensor adv;
    double momentum = 0.5;
    bool initialized = false;

    std::size_t size() const { return orig.rank() == 2 ? orig.rows() : 0; }
};

/// Clean and adversarial sentence representations of every training
/// example, unit-normalized. The perturbation for example i is the final
/// FreeLB delta drawn from make_rng(seed, {kBankStream, i}).
MemoryBank bank_init(const model::ModelParams& params, const data::Dataset& train,
                     const adversary::FreeLBConfig& freelb, double momentum, std::uint64_t seed);

inline constexpr std::uint64_t kBankStream = 0xB4;

/// M * old + (1 - M) * fresh, before normalization.
std::vector<double> momentum_mix(std::span<const double> old, std::span<const double> fresh, double momentum);

/// Mix both rows of example i with the bank's momentum and renormalize.
void bank_update(MemoryBank& bank, std::size_t i, std::span<const double> rep, std::span<const double> rep_adv);

void normalize(std::span<double> row);

/// m distinct indices whose labels differ from anchor_label, uniformly
/// without replacement.
std::vector<std::size_t> sample_negatives(std::span<const std::size_t> labels, std::size_t anchor_label,
                                          std::size_t m, std::mt19937_64& rng);

/// Same draw as sample_negatives with the candidate pools built once.
class NegativeSampler {
public:
    explicit NegativeSampler(std::span<const std::size_t> labels);
    std::vector<std::size_t> sample(std::size_t anchor_label, std::size_t m, std::mt19937_64& rng) const;
    std::size_t available(std::size_t anchor_label) const;

private:
    std::vector<std::vector<std::size_t>> pools_;  // per class: indices of other classes
};

/// exp(x1 . x2 / temperature)
double score(std::span<const double> x1, std::span<const double> x2, double temperature);

struct ContrastiveParts {
    double anchored_adv = 0.0;   // L_D^a
    double anchored_orig = 0.0;  // L_D^o
    double total() const { return anchored_adv + anchored_orig; }
};

/// Both anchored losses in log-space. Negatives are m x d_h row blocks.
ContrastiveParts contrastive_parts(std::span<const double> rep, std::span<const double> rep_adv,
                                   const Tensor& neg_orig, const Tensor& neg_adv, double temperature,
                                   bool include_positive = false);

double contrastive_loss(std::span<const double> rep, std::span<const double> rep_adv, const Tensor& neg_orig,
                        const Tensor& neg_adv, double temperature, bool include_positive = false);

/// Differentiable version. rep and rep_adv are 1 x d_h nodes (already
/// normalized); the negatives enter as constants.
Var contrastive_loss(Var rep, Var rep_adv, const Tensor& neg_orig, const Tensor& neg_adv, double temperature,
                     bool include_positive = false);

/// Rows idx of a bank matrix.
Tensor gather(const Tensor& bank, std::span<const std::size_t> idx);

}  // namespace advrep::carl
