#include "advrep/trainer/trainer.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include "advrep/eval/eval.hpp"
#include "advrep/rng.hpp"

namespace advrep::trainer {

namespace {

constexpr std::uint64_t kBatchStream = 1;
constexpr std::uint64_t kFreeLBStream = 2;
constexpr std::uint64_t kNegativeStream = 3;

}  // namespace

std::string mode_name(Mode mode) {
    switch (mode) {
        case Mode::Plain: return "plain";
        case Mode::FreeLB: return "freelb";
        case Mode::Carl: return "carl";
        case Mode::Rar: return "rar";
    }
    return "?";
}

Mode parse_mode(const std::string& name) {
    if (name == "plain") return Mode::Plain;
    if (name == "freelb") return Mode::FreeLB;
    if (name == "carl") return Mode::Carl;
    if (name == "rar") return Mode::Rar;
    throw std::invalid_argument("unknown mode '" + name + "' (expected plain, freelb, carl or rar)");
}

void TrainConfig::validate() const {
    if (w_r < 0.0) throw std::invalid_argument("w_r must be >= 0");
    if (!(learning_rate > 0.0)) throw std::invalid_argument("learning_rate must be > 0");
    if (batch_size < 1) throw std::invalid_argument("batch_size must be >= 1");
    if (eval_every < 1) throw std::invalid_argument("eval_every must be >= 1");
    if (mode != Mode::Plain) freelb.validate();
    if (mode == Mode::Carl) carl.validate();
}

bool contrastive_active(const TrainConfig& config, std::size_t step) {
    return config.mode == Mode::Carl && step >= config.carl.start_step;
}

double total_loss(const LossComponents& c, Mode mode, std::size_t step, const TrainConfig& config) {
    auto need = [&](const std::optional<double>& v, const char* name) {
        if (!v) throw std::invalid_argument("total_loss: mode " + mode_name(mode) + " needs " + name);
        return *v;
    };
    double loss = need(c.l_c, "l_c");
    switch (mode) {
        case Mode::Plain:
        case Mode::FreeLB: break;
        case Mode::Carl:
            if (step >= config.carl.start_step) loss += need(c.l_d, "l_d");
            break;
        case Mode::Rar: loss += config.w_r * need(c.l_r, "l_r"); break;
    }
    return loss;
}

AdamState adam_init(const ModelParams& params) {
    AdamState s;
    s.m = model::zero_grads(params);
    s.v = model::zero_grads(params);
    return s;
}

void adam_step(ModelParams& params, const ParamGrads& grads, AdamState& state, double learning_rate) {
    auto tensors = params.tensors();
    if (grads.size() != tensors.size() || state.m.size() != tensors.size() || state.v.size() != tensors.size()) {
        throw nx::ShapeError("adam_step: expected " + std::to_string(tensors.size()) + " gradient tensors, got " +
                             std::to_string(grads.size()));
    }
    state.t += 1;
    const double c1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.t));
    const double c2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.t));
    for (std::size_t k = 0; k < tensors.size(); ++k) {
        Tensor& p = *tensors[k].tensor;
        nx::require_same_shape(p, grads[k], "adam_step");
        Tensor& m = state.m[k];
        Tensor& v = state.v[k];
        for (std::size_t i = 0; i < p.size(); ++i) {
            const double g = grads[k][i];
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g;
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g * g;
            p[i] -= learning_rate * (m[i] / c1) / (std::sqrt(v[i] / c2) + state.eps);
        }
    }
}

ExampleTerms auxiliary_terms(const data::TokenizedExample& ex, const ModelParams& params, const ExamplePlan& plan,
                             const TrainConfig& config, std::size_t step, bool want_grads) {
    ExampleTerms out;
    const bool want_d = contrastive_active(config, step) && plan.neg_orig.size() > 0;
    const bool want_r = config.mode == Mode::Rar;
    if (!want_d && !want_r) return out;

    nx::Tape tape;
    model::Graph g(tape, params, want_grads);
    nx::Var delta = tape.constant_ref(plan.final_delta);
    auto adv = g.encode(nx::add(g.embed(ex.token_ids), delta), ex.mask);
    nx::Var loss;
    if (want_d) {
        auto clean = g.encode(g.embed(ex.token_ids), ex.mask);
        nx::Var r = nx::l2_normalize_rows(clean.sentence_rep);
        nx::Var ra = nx::l2_normalize_rows(adv.sentence_rep);
        loss = carl::contrastive_loss(r, ra, plan.neg_orig, plan.neg_adv, config.carl.temperature,
                                      config.carl.include_positive_in_denominator);
        out.components.l_d = loss.value().item();
        out.rep = r.value();
        out.rep_adv = ra.value();
    } else {
        nx::Var lr = model::reconstruction_loss(g.reconstruct_logits(adv.token_hidden), ex.token_ids, ex.mask);
        out.components.l_r = lr.value().item();
        loss = nx::scale(lr, config.w_r);
    }
    if (want_grads) out.grads = g.gradients(tape.backward(loss, g.leaves()));
    return out;
}

namespace {

void require_plans(const std::vector<data::TokenizedExample>& batch, const std::vector<ExamplePlan>& plans) {
    if (batch.size() != plans.size() || batch.empty()) {
        throw std::invalid_argument("batch and plans must be non-empty and of equal length");
    }
}

void scale_grads(ParamGrads& g, double factor) {
    for (auto& t : g) {
        for (double& v : t.values()) v *= factor;
    }
}

}  // namespace

double batch_objective(const std::vector<data::TokenizedExample>& batch, const std::vector<ExamplePlan>& plans,
                       const ModelParams& params, const TrainConfig& config, std::size_t step) {
    require_plans(batch, plans);
    double l_c = 0.0, l_d = 0.0, l_r = 0.0;
    bool has_d = false, has_r = false;
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& plan = plans[b];
        double mean = 0.0;
        for (const auto& it : plan.iterates) {
            mean += adversary::adversarial_loss(batch[b], params, it);
        }
        l_c += mean / static_cast<double>(plan.iterates.size());
        auto aux = auxiliary_terms(batch[b], params, plan, config, step, false);
        if (aux.components.l_d) {
            l_d += *aux.components.l_d;
            has_d = true;
        }
        if (aux.components.l_r) {
            l_r += *aux.components.l_r;
            has_r = true;
        }
    }
    const double n = static_cast<double>(batch.size());
    LossComponents c;
    c.l_c = l_c / n;
    if (has_d) c.l_d = l_d / n;
    if (has_r) c.l_r = l_r / n;
    return total_loss(c, config.mode, step, config);
}

ParamGrads batch_gradient(const std::vector<data::TokenizedExample>& batch, const std::vector<ExamplePlan>& plans,
                          const ModelParams& params, const TrainConfig& config, std::size_t step) {
    require_plans(batch, plans);
    ParamGrads total = model::zero_grads(params);
    for (std::size_t b = 0; b < batch.size(); ++b) {
        const auto& plan = plans[b];
        const double inv = 1.0 / static_cast<double>(plan.iterates.size());
        for (const auto& it : plan.iterates) {
            model::accumulate(total, adversary::adversarial_loss_and_grads(batch[b], params, it, true).param_grads,
                              inv);
        }
        auto aux = auxiliary_terms(batch[b], params, plan, config, step, true);
        if (!aux.grads.empty()) model::accumulate(total, aux.grads);
    }
    scale_grads(total, 1.0 / static_cast<double>(batch.size()));
    return total;
}

namespace {

void attach_negatives(ExamplePlan& plan, const data::TokenizedExample& ex, const TrainConfig& config,
                      std::size_t step, const carl::MemoryBank* bank, const carl::NegativeSampler* sampler) {
    if (!contrastive_active(config, step)) return;
    if (bank == nullptr || !bank->initialized || sampler == nullptr) {
        throw std::logic_error("contrastive loss requested before the memory bank was initialized");
    }
    auto rng = make_rng(config.seed, {kNegativeStream, step, ex.index});
    auto idx = sampler->sample(ex.label, config.carl.m, rng);
    plan.neg_orig = carl::gather(bank->orig, idx);
    plan.neg_adv = carl::gather(bank->adv, idx);
}

}  // namespace

std::vector<ExamplePlan> draw_plans(const std::vector<data::TokenizedExample>& batch, const ModelParams& params,
                                    const TrainConfig& config, std::size_t step, const carl::MemoryBank* bank,
                                    const carl::NegativeSampler* sampler) {
    std::vector<ExamplePlan> plans;
    for (const auto& ex : batch) {
        ExamplePlan plan;
        if (config.mode == Mode::Plain) {
            plan.final_delta = Tensor::zeros({ex.token_ids.size(), params.config.embed_dim});
            plan.iterates.push_back(plan.final_delta);
        } else {
            auto rng = make_rng(config.seed, {kFreeLBStream, step, ex.index});
            auto fr = adversary::freelb_generate(ex, params, config.freelb, rng);
            plan.iterates = std::move(fr.iterates);
            plan.final_delta = std::move(fr.delta.values);
        }
        attach_negatives(plan, ex, config, step, bank, sampler);
        plans.push_back(std::move(plan));
    }
    return plans;
}

std::vector<std::size_t> batch_indices(std::size_t train_size, const TrainConfig& config, std::size_t step) {
    if (config.batch_size > train_size) {
        throw std::invalid_argument("batch_size " + std::to_string(config.batch_size) + " exceeds training set size " +
                                    std::to_string(train_size));
    }
    auto rng = make_rng(config.seed, {kBatchStream, step});
    std::vector<std::size_t> order(train_size);
    for (std::size_t i = 0; i < train_size; ++i) order[i] = i;
    for (std::size_t k = 0; k < config.batch_size; ++k) {
        std::uniform_int_distribution<std::size_t> pick(k, train_size - 1);
        std::swap(order[k], order[pick(rng)]);
    }
    order.resize(config.batch_size);
    return order;
}

// ---------------------------------------------------------------------------
// History

namespace {

std::string cell(const std::optional<double>& v) {
    if (!v) return "";
    char buf[40];
    std::snprintf(buf, sizeof buf, "%.10g", *v);
    return buf;
}

}  // namespace

std::string TrainHistory::csv() const {
    std::string out = "step,l_c,l_d,l_r,val_acc\n";
    for (const auto& r : rows) {
        out += std::to_string(r.step) + "," + cell(r.l_c) + "," + cell(r.l_d) + "," + cell(r.l_r) + "," +
               cell(r.val_acc) + "\n";
    }
    return out;
}

void TrainHistory::write_csv(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << csv();
}

// ---------------------------------------------------------------------------
// State

TrainState initial_state(const model::ModelConfig& model_config, const TrainConfig& config) {
    TrainState s;
    s.params = model::init_params(model_config, config.seed);
    s.adam = adam_init(s.params);
    s.best_params = s.params;
    return s;
}

namespace {

constexpr double kAbsent = std::numeric_limits<double>::quiet_NaN();

double encode_opt(const std::optional<double>& v) { return v ? *v : kAbsent; }
std::optional<double> decode_opt(double v) { return std::isnan(v) ? std::nullopt : std::optional<double>(v); }

std::size_t header_size(const model::Container& c, const std::string& key) {
    auto it = c.header.find(key);
    if (it == c.header.end()) throw model::CheckpointError("training state lacks header '" + key + "'");
    return static_cast<std::size_t>(std::stoull(it->second));
}

}  // namespace

void save_state(const std::filesystem::path& path, const TrainState& s) {
    model::Container c;
    c.header["kind"] = "train-state";
    c.header["next_step"] = std::to_string(s.next_step);
    c.header["adam_t"] = std::to_string(s.adam.t);
    c.header["best_step"] = std::to_string(s.best_step);
    c.header["bank"] = s.bank ? "1" : "0";
    c.header["warnings"] = std::to_string(s.history.warnings.size());
    for (std::size_t i = 0; i < s.history.warnings.size(); ++i) {
        c.header["warning" + std::to_string(i)] = s.history.warnings[i];
    }
    model::store_params(c, s.params, "param/");
    model::store_params(c, s.best_params, "best/");
    auto names = s.params.tensors();
    for (std::size_t k = 0; k < names.size(); ++k) {
        c.tensors.emplace_back("adam_m/" + names[k].name, s.adam.m[k]);
        c.tensors.emplace_back("adam_v/" + names[k].name, s.adam.v[k]);
    }
    c.tensors.emplace_back("scalars", Tensor::vector({s.best_val_acc, s.adam.beta1, s.adam.beta2, s.adam.eps,
                                                       s.bank ? s.bank->momentum : 0.0}));
    if (s.bank) {
        c.tensors.emplace_back("bank/orig", s.bank->orig);
        c.tensors.emplace_back("bank/adv", s.bank->adv);
    }
    Tensor hist = Tensor::zeros({s.history.rows.size(), 5});
    for (std::size_t i = 0; i < s.history.rows.size(); ++i) {
        const auto& r = s.history.rows[i];
        hist.at(i, 0) = static_cast<double>(r.step);
        hist.at(i, 1) = encode_opt(r.l_c);
        hist.at(i, 2) = encode_opt(r.l_d);
        hist.at(i, 3) = encode_opt(r.l_r);
        hist.at(i, 4) = encode_opt(r.val_acc);
    }
    if (!s.history.rows.empty()) c.tensors.emplace_back("history", hist);
    model::write_container(path, c);
}

TrainState load_state(const std::filesystem::path& path) {
    auto c = model::read_container(path);
    auto kind = c.header.find("kind");
    if (kind == c.header.end() || kind->second != "train-state") {
        throw model::CheckpointError(path.string() + " is not a training-state checkpoint");
    }
    TrainState s;
    s.params = model::load_params(c, "param/");
    s.best_params = model::load_params(c, "best/");
    s.next_step = header_size(c, "next_step");
    s.best_step = header_size(c, "best_step");
    s.adam.t = header_size(c, "adam_t");
    for (const auto& nt : s.params.tensors()) {
        s.adam.m.push_back(c.tensor("adam_m/" + nt.name));
        s.adam.v.push_back(c.tensor("adam_v/" + nt.name));
        nx::require_same_shape(s.adam.m.back(), *nt.tensor, "load_state");
        nx::require_same_shape(s.adam.v.back(), *nt.tensor, "load_state");
    }
    const Tensor& sc = c.tensor("scalars");
    if (sc.size() != 5) throw model::CheckpointError("training state: malformed scalars record");
    s.best_val_acc = sc[0];
    s.adam.beta1 = sc[1];
    s.adam.beta2 = sc[2];
    s.adam.eps = sc[3];
    if (header_size(c, "bank") == 1) {
        carl::MemoryBank bank;
        bank.orig = c.tensor("bank/orig");
        bank.adv = c.tensor("bank/adv");
        bank.momentum = sc[4];
        bank.initialized = true;
        s.bank = std::move(bank);
    }
    for (std::size_t i = 0, n = header_size(c, "warnings"); i < n; ++i) {
        s.history.warnings.push_back(c.header.at("warning" + std::to_string(i)));
    }
    if (const Tensor* hist = c.find("history")) {
        for (std::size_t i = 0; i < hist->rows(); ++i) {
            HistoryRow r;
            r.step = static_cast<std::size_t>(hist->at(i, 0));
            r.l_c = decode_opt(hist->at(i, 1));
            r.l_d = decode_opt(hist->at(i, 2));
            r.l_r = decode_opt(hist->at(i, 3));
            r.val_acc = decode_opt(hist->at(i, 4));
            s.history.rows.push_back(r);
        }
    }
    return s;
}

// ---------------------------------------------------------------------------
// Loop

void run(TrainState& state, const data::Dataset& train, const data::Dataset& val, const TrainConfig& config,
         const TrainHooks& hooks) {
    config.validate();
    if (train.empty()) throw std::invalid_argument("train: empty training set");
    if (val.empty()) throw std::invalid_argument("train: empty validation set");
    if (config.mode == Mode::Rar && !state.params.config.reconstructor) {
        throw std::invalid_argument("train: mode rar needs a model with the reconstructor head");
    }
    const auto labels = train.labels();
    std::optional<carl::NegativeSampler> sampler;
    if (config.mode == Mode::Carl) {
        if (config.carl.m >= train.size()) {
            throw std::invalid_argument("carl.m must be smaller than the training set");
        }
        sampler.emplace(labels);
        for (std::size_t c = 0; c < train.num_classes; ++c) {
            if (sampler->available(c) < config.carl.m) {
                throw std::invalid_argument("carl.m = " + std::to_string(config.carl.m) + " exceeds the " +
                                            std::to_string(sampler->available(c)) + " negatives of class " +
                                            std::to_string(c));
            }
        }
        if (config.carl.start_step >= config.max_steps && state.next_step == 0) {
            state.history.warnings.push_back("carl.start_step " + std::to_string(config.carl.start_step) +
                                             " >= max_steps " + std::to_string(config.max_steps) +
                                             "; the contrastive loss never activates");
        }
    }

    const std::size_t de = state.params.config.embed_dim;
    std::size_t ran = 0;
    while (state.next_step < config.max_steps) {
        if (hooks.stop_after != 0 && ran == hooks.stop_after) break;
        const std::size_t step = state.next_step;
        if (config.mode == Mode::Carl && step == config.carl.start_step && !state.bank) {
            state.bank = carl::bank_init(state.params, train, config.freelb, config.carl.momentum, config.seed);
        }

        const auto idx = batch_indices(train.size(), config, step);
        ParamGrads grads = model::zero_grads(state.params);
        double l_c = 0.0, l_d = 0.0, l_r = 0.0;
        std::vector<std::pair<std::size_t, ExampleTerms>> bank_rows;
        for (std::size_t i : idx) {
            const auto& ex = train.examples[i];
            ExamplePlan plan;
            if (config.mode == Mode::Plain) {
                Tensor zero = Tensor::zeros({ex.token_ids.size(), de});
                auto fwd = adversary::adversarial_loss_and_grads(ex, state.params, zero, true);
                l_c += fwd.loss;
                model::accumulate(grads, fwd.param_grads);
            } else {
                auto rng = make_rng(config.seed, {kFreeLBStream, step, ex.index});
                auto fr = adversary::freelb_generate(ex, state.params, config.freelb, rng);
                l_c += fr.mean_loss;
                model::accumulate(grads, fr.param_grads);
                plan.final_delta = std::move(fr.delta.values);
                attach_negatives(plan, ex, config, step, state.bank ? &*state.bank : nullptr,
                                 sampler ? &*sampler : nullptr);
                auto aux = auxiliary_terms(ex, state.params, plan, config, step, true);
                if (!aux.grads.empty()) model::accumulate(grads, aux.grads);
                if (aux.components.l_d) l_d += *aux.components.l_d;
                if (aux.components.l_r) l_r += *aux.components.l_r;
                if (aux.components.l_d) bank_rows.emplace_back(ex.index, std::move(aux));
            }
        }
        const double n = static_cast<double>(idx.size());
        scale_grads(grads, 1.0 / n);
        adam_step(state.params, grads, state.adam, config.learning_rate);
        for (const auto& [row, terms] : bank_rows) {
            carl::bank_update(*state.bank, row, terms.rep.values(), terms.rep_adv.values());
        }

        HistoryRow rec;
        rec.step = step;
        rec.l_c = l_c / n;
        if (contrastive_active(config, step)) rec.l_d = l_d / n;
        if (config.mode == Mode::Rar) rec.l_r = l_r / n;
        state.next_step = step + 1;
        ++ran;
        const bool eval_point = state.next_step % config.eval_every == 0 || state.next_step == config.max_steps;
        if (eval_point) {
            rec.val_acc = eval::accuracy(state.params, val);
            if (*rec.val_acc > state.best_val_acc) {
                state.best_val_acc = *rec.val_acc;
                state.best_params = state.params;
                state.best_step = step;
            }
        }
        state.history.rows.push_back(rec);
        if (eval_point && hooks.on_eval) hooks.on_eval(state);
    }
}

TrainState train(const data::Dataset& train_set, const data::Dataset& val, const model::ModelConfig& model_config,
                 const TrainConfig& config, const TrainHooks& hooks) {
    config.validate();
    model_config.validate();
    TrainState state = initial_state(model_config, config);
    run(state, train_set, val, config, hooks);
    return state;
}

}  // namespace advrep::trainer
