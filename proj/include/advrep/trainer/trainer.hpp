#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <vector>

#include "advrep/adversary/adversary.hpp"
#include "advrep/carl/carl.hpp"
#include "advrep/data/data.hpp"
#include "advrep/model/checkpoint.hpp"
#include "advrep/model/model.hpp"

namespace advrep::trainer {

using model::ModelParams;
using model::ParamGrads;
using nx::Tensor;

enum class Mode { Plain, FreeLB, Carl, Rar };

std::string mode_name(Mode mode);
Mode parse_mode(const std::string& name);

struct TrainConfig {
    Mode mode = Mode::Plain;
    adversary::FreeLBConfig freelb;
    carl::CarlConfig carl;
    double w_r = 0.1;
    double learning_rate = 1e-5;
    std::size_t batch_size = 32;
    std::size_t max_steps = 1000;
    std::size_t eval_every = 100;
    std::uint64_t seed = 0;

    void validate() const;
};

struct LossComponents {
    std::optional<double> l_c;
    std::optional<double> l_d;
    std::optional<double> l_r;
};

/// Whether the contrastive term is part of the objective at this step.
bool contrastive_active(const TrainConfig& config, std::size_t step);

/// The scalar objective for a mode; throws if a required component is
/// missing.
double total_loss(const LossComponents& components, Mode mode, std::size_t step, const TrainConfig& config);

struct AdamState {
    std::vector<Tensor> m;
    std::vector<Tensor> v;
    std::uint64_t t = 0;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
};

AdamState adam_init(const ModelParams& params);
/// One bias-corrected Adam update in place.
void adam_step(ModelParams& params, const ParamGrads& grads, AdamState& state, double learning_rate);

/// Everything random that one example contributes to a step, fixed in
/// advance: the perturbations the adversarial losses are taken at and the
/// bank negatives. Holding these constant makes the objective a smooth
/// function of the parameters.
struct ExamplePlan {
    std::vector<Tensor> iterates;  // perturbations for L_C (one zero tensor in plain mode)
    Tensor final_delta;            // perturbation for L_D and L_R
    Tensor neg_orig;               // m x d_h, empty when L_D is off
    Tensor neg_adv;
};

struct ExampleTerms {
    LossComponents components;
    ParamGrads grads;  // gradient of the per-example objective
    Tensor rep;        // unit-normalized clean anchor (carl)
    Tensor rep_adv;    // unit-normalized adversarial anchor (carl)
};

/// L_D and L_R of one example (whichever the mode and plan call for) and,
/// if asked, their parameter gradients with w_r already applied to L_R's.
ExampleTerms auxiliary_terms(const data::TokenizedExample& example, const ModelParams& params,
                             const ExamplePlan& plan, const TrainConfig& config, std::size_t step,
                             bool want_grads = true);

/// Batch objective and gradient at fixed plans. This is what a training
/// step descends, written out without the FreeLB shortcut so it can be
/// checked against finite differences.
double batch_objective(const std::vector<data::TokenizedExample>& batch, const std::vector<ExamplePlan>& plans,
                       const ModelParams& params, const TrainConfig& config, std::size_t step);
ParamGrads batch_gradient(const std::vector<data::TokenizedExample>& batch, const std::vector<ExamplePlan>& plans,
                          const ModelParams& params, const TrainConfig& config, std::size_t step);

/// The plans a training step would draw for a batch.
std::vector<ExamplePlan> draw_plans(const std::vector<data::TokenizedExample>& batch, const ModelParams& params,
                                    const TrainConfig& config, std::size_t step, const carl::MemoryBank* bank,
                                    const carl::NegativeSampler* sampler);

/// Batch indices for a step: batch_size distinct training rows drawn from a
/// stream keyed by (seed, step).
std::vector<std::size_t> batch_indices(std::size_t train_size, const TrainConfig& config, std::size_t step);

struct HistoryRow {
    std::size_t step = 0;
    std::optional<double> l_c;
    std::optional<double> l_d;
    std::optional<double> l_r;
    std::optional<double> val_acc;

    bool operator==(const HistoryRow&) const = default;
};

struct TrainHistory {
    std::vector<HistoryRow> rows;
    std::vector<std::string> warnings;

    std::string csv() const;  // header step,l_c,l_d,l_r,val_acc
    void write_csv(const std::filesystem::path& path) const;
};

/// Complete training state; enough to resume bitwise.
struct TrainState {
    ModelParams params;
    AdamState adam;
    std::size_t next_step = 0;
    std::optional<carl::MemoryBank> bank;
    TrainHistory history;
    ModelParams best_params;
    double best_val_acc = -1.0;
    std::size_t best_step = 0;
};

TrainState initial_state(const model::ModelConfig& model_config, const TrainConfig& config);

void save_state(const std::filesystem::path& path, const TrainState& state);
TrainState load_state(const std::filesystem::path& path);

struct TrainHooks {
    /// Called after each evaluation point with the state as of that step.
    std::function<void(const TrainState&)> on_eval;
    /// Stop after this many steps of the run (for resume tests); 0 = run to max_steps.
    std::size_t stop_after = 0;
};

/// Runs steps state.next_step .. max_steps - 1.
void run(TrainState& state, const data::Dataset& train, const data::Dataset& val, const TrainConfig& config,
         const TrainHooks& hooks = {});

TrainState train(const data::Dataset& train, const data::Dataset& val, const model::ModelConfig& model_config,
                 const TrainConfig& config, const TrainHooks& hooks = {});

}  // namespace advrep::trainer
