#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "advrep/data/data.hpp"
#include "advrep/model/model.hpp"

namespace advrep::adversary {

using model::ModelParams;
using model::ParamGrads;
using nx::Tensor;
using nx::Var;

/// Perturbation generator settings. Typical search region: gamma in [0, 0.8],
/// alpha in [0.01, 0.2], epsilon in [0, 0.5], n_steps in [2, 4]; these are
/// not enforced here.
struct FreeLBConfig {
    double gamma = 0.0;    // initial random perturbation norm
    double alpha = 0.1;    // ascent step size
    double epsilon = 0.0;  // max norm, 0 = unbounded
    std::size_t n_steps = 1;

    void validate() const;
};

struct AttackConfig {
    std::size_t k_steps = 3;
    double alpha = 0.1;
    double epsilon = 0.1;
    double gamma = 0.0;  // random start; 0 starts from the clean input
    std::uint64_t seed = 0;

    void validate() const;
};

/// Additive perturbation on the L x d_e input embeddings. Rows with mask 0
/// are always zero.
struct Delta {
    Tensor values;
    std::vector<int> mask;

    double norm() const { return nx::frobenius_norm(values.values()); }
};

Delta zero_delta(std::size_t len, std::size_t embed_dim, std::span<const int> mask);

/// Entries at masked-in rows ~ U(-1, 1), rescaled to Frobenius norm gamma.
Delta init_perturbation(std::size_t len, std::size_t embed_dim, double gamma, std::span<const int> mask,
                        std::mt19937_64& rng);

/// Rescale onto the epsilon ball when outside it; epsilon = 0 leaves delta alone.
void project(Delta& delta, double epsilon);

/// delta + alpha * g / ||g|| then projection. Skipped when ||g|| < 1e-12.
Delta ascent_step(const Delta& delta, const Tensor& grad, double alpha, double epsilon);

inline constexpr double kDegenerateGradNorm = 1e-12;

struct ForwardResult {
    double loss = 0.0;
    ParamGrads param_grads;  // empty unless requested
    Tensor delta_grad;
};

/// Classification loss at E + delta with gradients for delta and, optionally,
/// every parameter.
ForwardResult adversarial_loss_and_grads(const data::TokenizedExample& example, const ModelParams& params,
                                         const Tensor& delta, bool want_param_grads);

/// Classification loss at embeddings + delta, forward only.
double adversarial_loss(const data::TokenizedExample& example, const ModelParams& params, const Tensor& delta);

struct FreeLBResult {
    Delta delta;                  // final perturbation after n ascent steps
    ParamGrads param_grads;       // mean over the n steps
    double mean_loss = 0.0;       // mean of the n adversarial losses
    std::vector<double> step_losses;
    std::vector<Tensor> iterates;  // the n perturbations the losses were taken at
};

/// Multi-step ascent that accumulates parameter gradients from every
/// forward/backward pass instead of discarding them.
FreeLBResult freelb_generate(const data::TokenizedExample& example, const ModelParams& params,
                             const FreeLBConfig& config, std::mt19937_64& rng);

/// The final perturbation of freelb_generate without the parameter
/// gradients; consumes the rng identically.
Delta freelb_perturbation(const data::TokenizedExample& example, const ModelParams& params,
                          const FreeLBConfig& config, std::mt19937_64& rng);

/// Projected gradient ascent on the classification loss, no parameter
/// gradients. The random start (if any) draws from a stream keyed by the
/// attack seed and the example index.
Delta kpgd_attack(const data::TokenizedExample& example, const ModelParams& params, const AttackConfig& config);

}  // namespace advrep::adversary
