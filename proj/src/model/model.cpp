#include "advrep/model/model.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

namespace advrep::model {

void ModelConfig::validate() const {
    if (vocab_size == 0 || embed_dim == 0 || hidden_dim == 0 || num_classes == 0 || max_len == 0) {
        throw std::invalid_argument("model config: all dimensions must be positive");
    }
    if (max_len < 2) throw std::invalid_argument("model config: max_len must leave room for CLS and one token");
    if (embed_dim < 2 || hidden_dim < 2) throw std::invalid_argument("model config: layer norm needs width >= 2");
}

std::vector<NamedTensor> ModelParams::tensors() {
    std::vector<NamedTensor> out{
        {"embedding", &embedding}, {"position", &position},   {"w_query", &w_query},
        {"w_key", &w_key},         {"w_value", &w_value},     {"ff_weight", &ff_weight},
        {"ff_bias", &ff_bias},     {"norm_gain", &norm_gain}, {"norm_bias", &norm_bias},
        {"classifier", &classifier},
    };
    if (config.reconstructor) {
        out.push_back({"recon_weight", &recon_weight});
        out.push_back({"recon_bias", &recon_bias});
        out.push_back({"recon_norm_gain", &recon_norm_gain});
        out.push_back({"recon_norm_bias", &recon_norm_bias});
    }
    return out;
}

std::vector<ConstNamedTensor> ModelParams::tensors() const {
    std::vector<ConstNamedTensor> out;
    for (auto& nt : const_cast<ModelParams*>(this)->tensors()) out.push_back({nt.name, nt.tensor});
    return out;
}

ParamGrads zero_grads(const ModelParams& params) {
    ParamGrads out;
    for (const auto& nt : params.tensors()) out.push_back(Tensor::zeros(nt.tensor->shape()));
    return out;
}

void accumulate(ParamGrads& into, const ParamGrads& add, double factor) {
    if (into.size() != add.size()) throw std::invalid_argument("accumulate: gradient sets differ in length");
    for (std::size_t k = 0; k < into.size(); ++k) {
        nx::require_same_shape(into[k], add[k], "accumulate");
        auto dst = into[k].values();
        auto src = add[k].values();
        for (std::size_t i = 0; i < dst.size(); ++i) dst[i] += factor * src[i];
    }
}

ModelParams init_params(const ModelConfig& config, std::uint64_t seed) {
    config.validate();
    std::mt19937_64 rng(seed);
    std::uniform_real_distribution<double> dist(-0.05, 0.05);
    auto uniform = [&](nx::Shape shape) {
        Tensor t = Tensor::zeros(std::move(shape));
        for (double& v : t.values()) v = dist(rng);
        return t;
    };
    const auto V = config.vocab_size, de = config.embed_dim, dh = config.hidden_dim;

    ModelParams p;
    p.config = config;
    p.embedding = uniform({V, de});
    p.position = uniform({config.max_len, de});
    p.w_query = uniform({de, dh});
    p.w_key = uniform({de, dh});
    p.w_value = uniform({de, dh});
    p.ff_weight = uniform({dh, dh});
    p.ff_bias = Tensor::zeros({dh});
    p.norm_gain = Tensor::filled({dh}, 1.0);
    p.norm_bias = Tensor::zeros({dh});
    p.classifier = uniform({config.num_classes, dh});
    if (config.reconstructor) {
        p.recon_weight = uniform({dh, de});
        p.recon_bias = Tensor::zeros({de});
        p.recon_norm_gain = Tensor::filled({de}, 1.0);
        p.recon_norm_bias = Tensor::zeros({de});
    }
    return p;
}

std::size_t param_count(const ModelParams& params) {
    std::size_t total = 0;
    for (const auto& nt : params.tensors()) total += nt.tensor->size();
    return total;
}

Graph::Graph(nx::Tape& tape, const ModelParams& params, bool trainable) : tape_(&tape), params_(&params) {
    auto bind = [&](const Tensor& t) {
        Var v = trainable ? tape.leaf(t) : tape.constant_ref(t);
        leaves_.push_back(v);
        return v;
    };
    embedding_ = bind(params.embedding);
    position_ = bind(params.position);
    w_query_ = bind(params.w_query);
    w_key_ = bind(params.w_key);
    w_value_ = bind(params.w_value);
    ff_weight_ = bind(params.ff_weight);
    ff_bias_ = bind(params.ff_bias);
    norm_gain_ = bind(params.norm_gain);
    norm_bias_ = bind(params.norm_bias);
    classifier_ = bind(params.classifier);
    if (params.config.reconstructor) {
        recon_weight_ = bind(params.recon_weight);
        recon_bias_ = bind(params.recon_bias);
        recon_norm_gain_ = bind(params.recon_norm_gain);
        recon_norm_bias_ = bind(params.recon_norm_bias);
    }
}

Var Graph::embed(std::span<const std::size_t> token_ids) const {
    if (token_ids.size() > params_->config.max_len) {
        throw std::invalid_argument("embed: sequence of " + std::to_string(token_ids.size()) +
                                    " exceeds max_len " + std::to_string(params_->config.max_len));
    }
    for (auto id : token_ids) {
        if (id >= params_->config.vocab_size) {
            throw std::out_of_range("embed: token id " + std::to_string(id) + " outside vocabulary of " +
                                    std::to_string(params_->config.vocab_size));
        }
    }
    std::vector<std::size_t> positions(token_ids.size());
    std::iota(positions.begin(), positions.end(), std::size_t{0});
    return nx::add(nx::gather_rows(embedding_, token_ids), nx::gather_rows(position_, positions));
}

EncodedVars Graph::encode(Var embeddings, std::span<const int> mask) const {
    const std::size_t L = embeddings.value().rows();
    if (mask.size() != L) throw nx::ShapeError("encode: mask length does not match sequence length");
    if (!mask[0]) throw std::invalid_argument("encode: CLS position must be unmasked");

    Tensor key_bias = Tensor::zeros({L, L});
    for (std::size_t i = 0; i < L; ++i) {
        for (std::size_t j = 0; j < L; ++j) {
            if (!mask[j]) key_bias.at(i, j) = kMaskedLogit;
        }
    }
    const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(params_->config.hidden_dim));

    Var q = nx::matmul(embeddings, w_query_);
    Var k = nx::matmul(embeddings, w_key_);
    Var v = nx::matmul(embeddings, w_value_);
    Var scores = nx::add(nx::scale(nx::matmul_bt(q, k), inv_sqrt_d), tape_->constant(std::move(key_bias)));
    Var attn = nx::softmax_rows(scores);
    // Residual in value space keeps each position's own content available.
    Var mixed = nx::add(nx::matmul(attn, v), v);
    Var ff = nx::gelu(nx::add_row_bias(nx::matmul(mixed, ff_weight_), ff_bias_));
    Var hidden = nx::layer_norm(nx::add(mixed, ff), norm_gain_, norm_bias_);
    return {hidden, nx::row(hidden, 0)};
}

Var Graph::class_logits(Var sentence_rep) const { return nx::matmul_bt(sentence_rep, classifier_); }

Var Graph::reconstruct_logits(Var token_hidden) const {
    if (!params_->config.reconstructor) throw std::logic_error("no reconstructor head");
    Var h = nx::gelu(nx::add_row_bias(nx::matmul(token_hidden, recon_weight_), recon_bias_));
    Var n = nx::layer_norm(h, recon_norm_gain_, recon_norm_bias_);
    return nx::matmul_bt(n, embedding_);
}

ParamGrads Graph::gradients(const nx::GradientMap& grads) const {
    if (!leaves_.empty() && tape_->kind(leaves_[0]) != nx::OpKind::Leaf) {
        throw std::logic_error("gradients requested from a non-trainable graph");
    }
    ParamGrads out;
    out.reserve(leaves_.size());
    for (Var v : leaves_) out.push_back(grads.at(v));
    return out;
}

std::vector<int> reconstruction_mask(std::span<const int> mask) {
    std::vector<int> out(mask.begin(), mask.end());
    if (!out.empty()) out[0] = 0;
    return out;
}

Var classification_loss(Var class_logits, std::size_t label) {
    const std::size_t target[1] = {label};
    const int mask[1] = {1};
    return nx::cross_entropy(class_logits, target, mask);
}

Var reconstruction_loss(Var logits, std::span<const std::size_t> token_ids, std::span<const int> mask) {
    auto scored = reconstruction_mask(mask);
    if (std::none_of(scored.begin(), scored.end(), [](int m) { return m != 0; })) {
        throw std::invalid_argument("reconstruction_loss: no positions to score");
    }
    return nx::cross_entropy(logits, token_ids, scored);
}

Tensor embed(std::span<const std::size_t> token_ids, const ModelParams& params) {
    nx::Tape tape;
    Graph g(tape, params, false);
    return g.embed(token_ids).value();
}

EncodedExample encode(const Tensor& embeddings, std::span<const int> mask, const ModelParams& params) {
    nx::Tape tape;
    Graph g(tape, params, false);
    auto enc = g.encode(tape.constant_ref(embeddings), mask);
    const Tensor& rep = enc.sentence_rep.value();
    return {enc.token_hidden.value(), Tensor({rep.cols()}, std::vector<double>(rep.values().begin(), rep.values().end()))};
}

Tensor classify(const Tensor& sentence_rep, const ModelParams& params) {
    nx::Tape tape;
    Graph g(tape, params, false);
    Tensor as_row({1, sentence_rep.size()}, std::vector<double>(sentence_rep.values().begin(), sentence_rep.values().end()));
    Tensor probs = nx::softmax_rows(g.class_logits(tape.constant(std::move(as_row))).value());
    return Tensor({probs.size()}, std::vector<double>(probs.values().begin(), probs.values().end()));
}

Tensor reconstruct_logits(const Tensor& token_hidden, const ModelParams& params) {
    nx::Tape tape;
    Graph g(tape, params, false);
    return g.reconstruct_logits(tape.constant_ref(token_hidden)).value();
}

double reconstruction_loss(const Tensor& logits, std::span<const std::size_t> token_ids, std::span<const int> mask) {
    nx::Tape tape;
    return reconstruction_loss(tape.constant_ref(logits), token_ids, mask).value().item();
}

Tensor predict_proba(const ModelParams& params, std::span<const std::size_t> token_ids, std::span<const int> mask,
                     const Tensor* perturbation) {
    nx::Tape tape;
    Graph g(tape, params, false);
    Var x = g.embed(token_ids);
    if (perturbation != nullptr) x = nx::add(x, tape.constant_ref(*perturbation));
    auto enc = g.encode(x, mask);
    Tensor probs = nx::softmax_rows(g.class_logits(enc.sentence_rep).value());
    return Tensor({probs.size()}, std::vector<double>(probs.values().begin(), probs.values().end()));
}

std::size_t predict(const ModelParams& params, std::span<const std::size_t> token_ids, std::span<const int> mask,
                    const Tensor* perturbation) {
    Tensor p = predict_proba(params, token_ids, mask, perturbation);
    auto v = p.values();
    return static_cast<std::size_t>(std::max_element(v.begin(), v.end()) - v.begin());
}

}  // namespace advrep::model
