#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "advrep/numerics/tape.hpp"
#include "advrep/numerics/tensor.hpp"

namespace advrep::model {

using nx::Tensor;
using nx::Var;

struct ModelConfig {
    std::size_t vocab_size = 0;
    std::size_t embed_dim = 0;
    std::size_t hidden_dim = 0;
    std::size_t num_classes = 0;
    std::size_t max_len = 0;  // includes the CLS position
    bool reconstructor = false;

    void validate() const;
    bool operator==(const ModelConfig&) const = default;
};

struct NamedTensor {
    std::string name;
    Tensor* tensor;
};

struct ConstNamedTensor {
    std::string name;
    const Tensor* tensor;
};

/// All trainable weights. The reconstructor's output projection is the
/// embedding matrix itself, so no V x d_e output matrix exists.
struct ModelParams {
    ModelConfig config;

    Tensor embedding;  // V x d_e
    Tensor position;   // L x d_e
    Tensor w_query;    // d_e x d_h
    Tensor w_key;      // d_e x d_h
    Tensor w_value;    // d_e x d_h
    Tensor ff_weight;  // d_h x d_h
    Tensor ff_bias;    // d_h
    Tensor norm_gain;  // d_h
    Tensor norm_bias;  // d_h
    Tensor classifier;  // C x d_h, no bias

    // Present iff config.reconstructor.
    Tensor recon_weight;     // d_h x d_e
    Tensor recon_bias;       // d_e
    Tensor recon_norm_gain;  // d_e
    Tensor recon_norm_bias;  // d_e

    /// Every trainable tensor in a fixed order.
    std::vector<NamedTensor> tensors();
    std::vector<ConstNamedTensor> tensors() const;

    bool operator==(const ModelParams&) const = default;
};

/// Per-tensor gradients aligned with ModelParams::tensors().
using ParamGrads = std::vector<Tensor>;

ParamGrads zero_grads(const ModelParams& params);
void accumulate(ParamGrads& into, const ParamGrads& add, double factor = 1.0);

/// Weights ~ U(-0.05, 0.05), biases 0, layer-norm gains 1.
ModelParams init_params(const ModelConfig& config, std::uint64_t seed);

/// Total scalar count; the tied projection adds nothing.
std::size_t param_count(const ModelParams& params);

/// Additive attention bias: 0 for valid keys, -1e9 for masked-out keys.
inline constexpr double kMaskedLogit = -1e9;

/// Token- and sentence-level representations on a tape.
struct EncodedVars {
    Var token_hidden;  // L x d_h
    Var sentence_rep;  // 1 x d_h, row 0 of token_hidden
};

/// Binds a ModelParams onto a tape as differentiable leaves and exposes the
/// forward pieces as graph builders.
class Graph {
public:
    /// With trainable = false the weights enter as constants and only other
    /// leaves (e.g. a perturbation) receive gradients.
    Graph(nx::Tape& tape, const ModelParams& params, bool trainable = true);

    nx::Tape& tape() const { return *tape_; }
    const ModelParams& params() const { return *params_; }

    /// E[id] + P[pos] per row.
    Var embed(std::span<const std::size_t> token_ids) const;
    EncodedVars encode(Var embeddings, std::span<const int> mask) const;
    /// W h as a 1 x C row.
    Var class_logits(Var sentence_rep) const;
    /// FF1 -> GELU -> layer norm -> E^T, giving L x V.
    Var reconstruct_logits(Var token_hidden) const;

    ParamGrads gradients(const nx::GradientMap& grads) const;
    std::span<const Var> leaves() const { return leaves_; }

private:
    nx::Tape* tape_;
    const ModelParams* params_;
    std::vector<Var> leaves_;
    Var embedding_, position_, w_query_, w_key_, w_value_, ff_weight_, ff_bias_, norm_gain_, norm_bias_,
        classifier_;
    Var recon_weight_, recon_bias_, recon_norm_gain_, recon_norm_bias_;
};

/// Per-position reconstruction mask: the input mask with the CLS position
/// cleared.
std::vector<int> reconstruction_mask(std::span<const int> mask);

Var classification_loss(Var class_logits, std::size_t label);
Var reconstruction_loss(Var logits, std::span<const std::size_t> token_ids, std::span<const int> mask);

// Tensor-level conveniences, each running a private tape.

struct EncodedExample {
    Tensor token_hidden;  // L x d_h
    Tensor sentence_rep;  // d_h
};

Tensor embed(std::span<const std::size_t> token_ids, const ModelParams& params);
EncodedExample encode(const Tensor& embeddings, std::span<const int> mask, const ModelParams& params);
Tensor classify(const Tensor& sentence_rep, const ModelParams& params);
Tensor reconstruct_logits(const Tensor& token_hidden, const ModelParams& params);
double reconstruction_loss(const Tensor& logits, std::span<const std::size_t> token_ids, std::span<const int> mask);

/// Class probabilities for a token sequence, optionally with an additive
/// embedding perturbation.
Tensor predict_proba(const ModelParams& params, std::span<const std::size_t> token_ids, std::span<const int> mask,
                     const Tensor* perturbation = nullptr);
std::size_t predict(const ModelParams& params, std::span<const std::size_t> token_ids, std::span<const int> mask,
                    const Tensor* perturbation = nullptr);

}  // namespace advrep::model
