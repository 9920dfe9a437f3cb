#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "advrep/cli/config.hpp"
#include "advrep/eval/eval.hpp"

namespace advrep::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitRuntime = 3;

struct TrainSummary {
    double best_val_acc = 0.0;
    std::size_t best_step = 0;
    double final_val_acc = 0.0;
    std::filesystem::path out_dir;
};

// Each command throws on failure; run_cli maps exceptions to exit codes.

/// Writes vocab.txt, effective.conf, history.csv, model.ckpt (final),
/// best.ckpt and state.ckpt (refreshed at every evaluation point) under
/// out_dir.
TrainSummary cmd_train(const Config& config, std::ostream& log);

/// Clean accuracy of a checkpoint on the test split (dev if no test).
eval::RobustnessReport cmd_eval(const Config& config, std::ostream& log);

/// One report row per attack.epsilon value.
std::vector<eval::RobustnessReport> cmd_attack(const Config& config, std::ostream& log);

std::vector<eval::ReconstructionLine> cmd_reconstruct(const Config& config, std::ostream& log);

struct GridResult {
    std::size_t point = 0;  // position in the cartesian product, gamma-major
    double gamma = 0.0;
    double alpha = 0.0;
    double epsilon = 0.0;
    std::size_t n = 0;
    double val_acc = 0.0;
    bool ok = false;
    std::string error;
    std::filesystem::path out_dir;
};

/// Trains every grid point, ranks by validation accuracy (ties: smaller n,
/// then smaller alpha, then listed order) and writes grid.csv and
/// best.conf. Returned in rank order, failed points last.
std::vector<GridResult> cmd_gridsearch(const Config& config, std::size_t jobs, std::ostream& log);

/// Writes a synthetic keyword task as train.tsv and dev.tsv under out_dir.
void cmd_synth(const Config& config, std::ostream& log);

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace advrep::cli
