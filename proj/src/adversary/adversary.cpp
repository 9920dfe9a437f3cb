#include "advrep/adversary/adversary.hpp"

#include <stdexcept>

#include "advrep/rng.hpp"

namespace advrep::adversary {

void FreeLBConfig::validate() const {
    if (gamma < 0.0) throw std::invalid_argument("freelb.gamma must be >= 0");
    if (!(alpha > 0.0)) throw std::invalid_argument("freelb.alpha must be > 0");
    if (epsilon < 0.0) throw std::invalid_argument("freelb.epsilon must be >= 0");
    if (n_steps < 1) throw std::invalid_argument("freelb.n must be >= 1");
}

void AttackConfig::validate() const {
    if (alpha < 0.0) throw std::invalid_argument("attack.alpha must be >= 0");
    if (epsilon < 0.0) throw std::invalid_argument("attack.epsilon must be >= 0");
    if (gamma < 0.0) throw std::invalid_argument("attack.gamma must be >= 0");
}

namespace {

void zero_masked_rows(Tensor& t, std::span<const int> mask) {
    for (std::size_t i = 0; i < t.rows(); ++i) {
        if (mask[i]) continue;
        for (double& v : t.row(i)) v = 0.0;
    }
}

void rescale(Tensor& t, double factor) {
    for (double& v : t.values()) v *= factor;
}

}  // namespace

Delta zero_delta(std::size_t len, std::size_t embed_dim, std::span<const int> mask) {
    if (mask.size() != len) throw nx::ShapeError("delta: mask length differs from sequence length");
    return {Tensor::zeros({len, embed_dim}), std::vector<int>(mask.begin(), mask.end())};
}

Delta init_perturbation(std::size_t len, std::size_t embed_dim, double gamma, std::span<const int> mask,
                        std::mt19937_64& rng) {
    if (gamma < 0.0) throw std::invalid_argument("init_perturbation: gamma must be >= 0");
    Delta d = zero_delta(len, embed_dim, mask);
    if (gamma == 0.0) return d;
    std::uniform_real_distribution<double> dist(-1.0, 1.0);
    for (std::size_t i = 0; i < len; ++i) {
        if (!mask[i]) continue;
        for (double& v : d.values.row(i)) v = dist(rng);
    }
    const double norm = d.norm();
    if (norm > 0.0) rescale(d.values, gamma / norm);
    return d;
}

void project(Delta& delta, double epsilon) {
    if (epsilon <= 0.0) return;
    const double norm = delta.norm();
    if (norm > epsilon) rescale(delta.values, epsilon / norm);
}

Delta ascent_step(const Delta& delta, const Tensor& grad, double alpha, double epsilon) {
    nx::require_same_shape(delta.values, grad, "ascent_step");
    Tensor g = grad;
    zero_masked_rows(g, delta.mask);
    const double gnorm = nx::frobenius_norm(g.values());
    if (gnorm < kDegenerateGradNorm) return delta;
    Delta next = delta;
    const double step = alpha / gnorm;
    for (std::size_t i = 0; i < g.size(); ++i) next.values[i] += step * g[i];
    project(next, epsilon);
    return next;
}

ForwardResult adversarial_loss_and_grads(const data::TokenizedExample& example, const ModelParams& params,
                                         const Tensor& delta, bool want_param_grads) {
    nx::Tape tape;
    model::Graph g(tape, params, want_param_grads);
    Var d = tape.leaf(delta);
    Var x = nx::add(g.embed(example.token_ids), d);
    auto enc = g.encode(x, example.mask);
    Var loss = model::classification_loss(g.class_logits(enc.sentence_rep), example.label);

    std::vector<Var> leaves{d};
    if (want_param_grads) leaves.insert(leaves.end(), g.leaves().begin(), g.leaves().end());
    auto grads = tape.backward(loss, leaves);

    ForwardResult out;
    out.loss = loss.value().item();
    out.delta_grad = grads.at(d);
    if (want_param_grads) out.param_grads = g.gradients(grads);
    return out;
}

double adversarial_loss(const data::TokenizedExample& example, const ModelParams& params, const Tensor& delta) {
    nx::Tape tape;
    model::Graph g(tape, params, false);
    Var x = nx::add(g.embed(example.token_ids), tape.constant_ref(delta));
    auto enc = g.encode(x, example.mask);
    return model::classification_loss(g.class_logits(enc.sentence_rep), example.label).value().item();
}

FreeLBResult freelb_generate(const data::TokenizedExample& example, const ModelParams& params,
                             const FreeLBConfig& config, std::mt19937_64& rng) {
    config.validate();
    const std::size_t len = example.token_ids.size();
    const std::size_t de = params.config.embed_dim;
    FreeLBResult out;
    out.delta = init_perturbation(len, de, config.gamma, example.mask, rng);
    out.param_grads = model::zero_grads(params);
    double total = 0.0;
    for (std::size_t t = 0; t < config.n_steps; ++t) {
        auto fwd = adversarial_loss_and_grads(example, params, out.delta.values, true);
        out.iterates.push_back(out.delta.values);
        out.step_losses.push_back(fwd.loss);
        total += fwd.loss;
        model::accumulate(out.param_grads, fwd.param_grads);
        out.delta = ascent_step(out.delta, fwd.delta_grad, config.alpha, config.epsilon);
    }
    const double n = static_cast<double>(config.n_steps);
    for (auto& g : out.param_grads) {
        for (double& v : g.values()) v /= n;
    }
    out.mean_loss = total / n;
    return out;
}

Delta freelb_perturbation(const data::TokenizedExample& example, const ModelParams& params,
                          const FreeLBConfig& config, std::mt19937_64& rng) {
    config.validate();
    Delta delta = init_perturbation(example.token_ids.size(), params.config.embed_dim, config.gamma, example.mask, rng);
    for (std::size_t t = 0; t < config.n_steps; ++t) {
        auto fwd = adversarial_loss_and_grads(example, params, delta.values, false);
        delta = ascent_step(delta, fwd.delta_grad, config.alpha, config.epsilon);
    }
    return delta;
}

Delta kpgd_attack(const data::TokenizedExample& example, const ModelParams& params, const AttackConfig& config) {
    config.validate();
    const std::size_t len = example.token_ids.size();
    const std::size_t de = params.config.embed_dim;
    Delta delta = zero_delta(len, de, example.mask);
    if (config.gamma > 0.0) {
        auto rng = make_rng(config.seed, {example.index});
        delta = init_perturbation(len, de, config.gamma, example.mask, rng);
        project(delta, config.epsilon);
    }
    for (std::size_t t = 0; t < config.k_steps; ++t) {
        auto fwd = adversarial_loss_and_grads(example, params, delta.values, false);
        delta = ascent_step(delta, fwd.delta_grad, config.alpha, config.epsilon);
    }
    return delta;
}

}  // namespace advrep::adversary
