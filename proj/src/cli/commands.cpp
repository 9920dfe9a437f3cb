#include "advrep/cli/commands.hpp"

#include <algorithm>
#include <atomic>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <mutex>
#include <sstream>
#include <thread>

#include <CLI11.hpp>

#include "advrep/data/data.hpp"
#include "advrep/model/checkpoint.hpp"
#include "advrep/trainer/trainer.hpp"

namespace advrep::cli {

namespace fs = std::filesystem;

namespace {

fs::path required_path(const Config& c, const std::string& key) {
    if (!c.has_value(key)) throw ConfigError(key + " is not set");
    return c.get(key);
}

fs::path out_dir(const Config& c) {
    fs::path dir = c.get("out_dir");
    fs::create_directories(dir);
    return dir;
}

void write_text(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << text;
}

fs::path report_path(const Config& c, const std::string& fallback) {
    if (c.has_value("report")) {
        fs::path p = c.get("report");
        if (p.has_parent_path()) fs::create_directories(p.parent_path());
        return p;
    }
    return out_dir(c) / fallback;
}

struct Loaded {
    model::ModelParams params;
    data::Vocabulary vocab;
    fs::path checkpoint;
};

// A checkpoint plus the vocabulary saved beside it.
Loaded load_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw model::CheckpointError("checkpoint not found: " + path.string());
    Loaded l;
    l.checkpoint = path;
    l.params = model::load_model(path);
    const fs::path vocab_path = path.parent_path() / "vocab.txt";
    l.vocab = data::Vocabulary::load(vocab_path);
    if (l.vocab.size() != l.params.config.vocab_size) {
        throw model::CheckpointError("checkpoint " + path.string() + " expects " +
                                     std::to_string(l.params.config.vocab_size) + " tokens but " +
                                     vocab_path.string() + " has " + std::to_string(l.vocab.size()));
    }
    return l;
}

fs::path checkpoint_path(const Config& c) {
    if (c.has_value("checkpoint")) return c.get("checkpoint");
    return fs::path(c.get("out_dir")) / "best.ckpt";
}

data::Dataset eval_split(const Config& c, const Loaded& l) {
    const std::string key = c.has_value("data.test") ? "data.test" : "data.dev";
    auto raw = data::load_tsv(required_path(c, key));
    if (raw.num_classes > l.params.config.num_classes) {
        throw model::CheckpointError("checkpoint has " + std::to_string(l.params.config.num_classes) +
                                     " classes but " + c.get(key) + " has labels up to " +
                                     std::to_string(raw.num_classes - 1));
    }
    auto ds = data::tokenize_dataset(raw, l.vocab, l.params.config.max_len);
    ds.num_classes = l.params.config.num_classes;
    return ds;
}

}  // namespace

TrainSummary cmd_train(const Config& c, std::ostream& log) {
    const auto tc = train_config(c);
    auto raw_train = data::load_tsv(required_path(c, "data.train"));
    auto raw_dev = data::load_tsv(required_path(c, "data.dev"));
    const fs::path dir = out_dir(c);
    auto vocab = data::build_vocab(raw_train, c.get_size("data.min_freq"));

    model::ModelConfig mc;
    mc.vocab_size = vocab.size();
    mc.embed_dim = c.get_size("model.embed_dim");
    mc.hidden_dim = c.get_size("model.hidden_dim");
    mc.max_len = c.get_size("model.max_len");
    mc.num_classes = std::max(raw_train.num_classes, raw_dev.num_classes);
    mc.reconstructor = wants_reconstructor(c);
    try {
        mc.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    auto train_set = data::tokenize_dataset(raw_train, vocab, mc.max_len);
    auto dev_set = data::tokenize_dataset(raw_dev, vocab, mc.max_len);
    train_set.num_classes = dev_set.num_classes = mc.num_classes;

    c.write(dir / "effective.conf");
    vocab.save(dir / "vocab.txt");

    trainer::TrainState state;
    if (c.has_value("resume")) {
        state = trainer::load_state(c.get("resume"));
        if (!(state.params.config == mc)) {
            throw model::CheckpointError("resume state " + c.get("resume") + " was trained with a different model");
        }
        log << "resuming at step " << state.next_step << "\n";
    } else {
        state = trainer::initial_state(mc, tc);
    }
    trainer::TrainHooks hooks;
    hooks.on_eval = [&](const trainer::TrainState& s) {
        trainer::save_state(dir / "state.ckpt", s);
        log << "step " << s.next_step << " val_acc " << *s.history.rows.back().val_acc << "\n";
    };
    try {
        trainer::run(state, train_set, dev_set, tc, hooks);
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    for (const auto& w : state.history.warnings) log << "warning: " << w << "\n";

    model::save_model(dir / "model.ckpt", state.params);
    model::save_model(dir / "best.ckpt", state.best_params);
    state.history.write_csv(dir / "history.csv");

    TrainSummary s;
    s.out_dir = dir;
    s.best_val_acc = state.best_val_acc;
    s.best_step = state.best_step;
    for (auto it = state.history.rows.rbegin(); it != state.history.rows.rend(); ++it) {
        if (it->val_acc) {
            s.final_val_acc = *it->val_acc;
            break;
        }
    }
    log << "mode " << trainer::mode_name(tc.mode) << ": best val_acc " << s.best_val_acc << " at step "
        << s.best_step << ", final " << s.final_val_acc << "\n";
    return s;
}

eval::RobustnessReport cmd_eval(const Config& c, std::ostream& log) {
    auto l = load_checkpoint(checkpoint_path(c));
    auto ds = eval_split(c, l);
    adversary::AttackConfig none;
    none.k_steps = 0;
    none.epsilon = 0.0;
    auto rep = eval::robustness_report(l.params, ds, none);
    write_text(report_path(c, "eval.csv"), eval::RobustnessReport::csv_header() + "\n" + rep.csv_row() + "\n");
    log << "checkpoint     " << l.checkpoint.string() << "\n" << rep.text();
    return rep;
}

std::vector<eval::RobustnessReport> cmd_attack(const Config& c, std::ostream& log) {
    auto l = load_checkpoint(checkpoint_path(c));
    auto ds = eval_split(c, l);
    std::vector<eval::RobustnessReport> out;
    std::string csv = eval::RobustnessReport::csv_header() + "\n";
    log << "checkpoint     " << l.checkpoint.string() << "\n";
    for (double eps : attack_epsilons(c)) {
        out.push_back(eval::robustness_report(l.params, ds, attack_config(c, eps)));
        csv += out.back().csv_row() + "\n";
        log << out.back().text();
    }
    write_text(report_path(c, "attack.csv"), csv);
    return out;
}

std::vector<eval::ReconstructionLine> cmd_reconstruct(const Config& c, std::ostream& log) {
    auto l = load_checkpoint(checkpoint_path(c));
    if (!l.params.config.reconstructor) {
        throw model::CheckpointError(l.checkpoint.string() + ": no reconstructor head");
    }
    std::optional<Loaded> base;
    if (c.has_value("baseline")) {
        base = load_checkpoint(c.get("baseline"));
        if (!(base->vocab == l.vocab)) {
            throw model::CheckpointError("baseline " + c.get("baseline") + " uses a different vocabulary");
        }
    }
    auto ds = eval_split(c, l);
    const auto eps = attack_epsilons(c);
    auto lines = eval::reconstruct_dataset(l.params, ds, attack_config(c, eps.front()), l.vocab,
                                           base ? &base->params : nullptr);
    std::string tsv;
    for (const auto& line : lines) tsv += line.tsv() + "\n";
    const fs::path path = report_path(c, "reconstruct.tsv");
    write_text(path, tsv);
    log << "wrote " << lines.size() << " lines to " << path.string() << "\n";
    return lines;
}

namespace {

std::string num(double v) {
    std::ostringstream os;
    os << v;
    return os.str();
}

}  // namespace

std::vector<GridResult> cmd_gridsearch(const Config& c, std::size_t jobs, std::ostream& log) {
    const GridSpec grid = grid_spec(c);
    train_config(c);  // fail fast on the shared part
    const fs::path dir = out_dir(c);
    c.write(dir / "effective.conf");

    std::vector<GridResult> points;
    for (double g : grid.gamma) {
        for (double a : grid.alpha) {
            for (double e : grid.epsilon) {
                for (std::size_t n : grid.n) {
                    GridResult r;
                    r.point = points.size();
                    r.gamma = g;
                    r.alpha = a;
                    r.epsilon = e;
                    r.n = n;
                    r.out_dir = dir / ("point_" + std::to_string(r.point));
                    points.push_back(r);
                }
            }
        }
    }

    std::atomic<std::size_t> next{0};
    std::mutex log_mutex;
    auto worker = [&] {
        for (std::size_t k = next++; k < points.size(); k = next++) {
            GridResult& r = points[k];
            Config pc = c;
            pc.set("freelb.gamma", num(r.gamma));
            pc.set("freelb.alpha", num(r.alpha));
            pc.set("freelb.epsilon", num(r.epsilon));
            pc.set("freelb.n", std::to_string(r.n));
            pc.set("out_dir", r.out_dir.string());
            std::ostringstream point_log;
            try {
                r.val_acc = cmd_train(pc, point_log).best_val_acc;
                r.ok = true;
            } catch (const std::exception& e) {
                r.error = e.what();
            }
            std::lock_guard<std::mutex> lock(log_mutex);
            log << "point " << r.point << " gamma=" << r.gamma << " alpha=" << r.alpha << " epsilon=" << r.epsilon
                << " n=" << r.n << ": " << (r.ok ? "val_acc " + num(r.val_acc) : "failed: " + r.error) << "\n";
        }
    };
    const std::size_t threads = std::clamp<std::size_t>(jobs, 1, points.size());
    std::vector<std::thread> pool;
    for (std::size_t t = 1; t < threads; ++t) pool.emplace_back(worker);
    worker();
    for (auto& t : pool) t.join();

    std::stable_sort(points.begin(), points.end(), [](const GridResult& x, const GridResult& y) {
        if (x.ok != y.ok) return x.ok;
        if (x.val_acc != y.val_acc) return x.val_acc > y.val_acc;
        if (x.n != y.n) return x.n < y.n;
        if (x.alpha != y.alpha) return x.alpha < y.alpha;
        return x.point < y.point;
    });

    std::string csv = "rank,point,gamma,alpha,epsilon,n,val_acc,status\n";
    for (std::size_t i = 0; i < points.size(); ++i) {
        const auto& r = points[i];
        char acc[32];
        std::snprintf(acc, sizeof acc, "%.6f", r.val_acc);
        csv += std::to_string(i + 1) + "," + std::to_string(r.point) + "," + num(r.gamma) + "," + num(r.alpha) +
               "," + num(r.epsilon) + "," + std::to_string(r.n) + "," + (r.ok ? acc : "") + "," +
               (r.ok ? "ok" : "failed") + "\n";
    }
    write_text(dir / "grid.csv", csv);
    if (points.empty() || !points.front().ok) throw std::runtime_error("gridsearch: every grid point failed");
    fs::copy_file(points.front().out_dir / "effective.conf", dir / "best.conf", fs::copy_options::overwrite_existing);
    log << "best: point " << points.front().point << " val_acc " << points.front().val_acc << " -> "
        << (dir / "best.conf").string() << "\n";
    return points;
}

void cmd_synth(const Config& c, std::ostream& log) {
    const fs::path dir = out_dir(c);
    data::SynthSpec spec;
    spec.num_classes = c.get_size("synth.classes");
    spec.vocab_size = c.get_size("synth.words");
    spec.seed = c.get_size("seed");
    spec.num_examples = c.get_size("synth.train_size");
    data::write_tsv(dir / "train.tsv", data::synth_generate(spec));
    spec.num_examples = c.get_size("synth.dev_size");
    spec.seed += 1;
    data::write_tsv(dir / "dev.tsv", data::synth_generate(spec));
    log << "wrote " << (dir / "train.tsv").string() << " and " << (dir / "dev.tsv").string() << "\n";
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"Adversarial training (FreeLB, CARL, RAR) and k-PGD evaluation for text classifiers"};
    app.require_subcommand(1);
    app.fallthrough();
    std::string config_path;
    std::vector<std::string> sets;
    std::size_t jobs = 1;
    std::optional<std::uint64_t> seed;
    app.add_option("--config", config_path, "config file of key = value lines");
    app.add_option("--set", sets, "override one key, key=value (repeatable)");
    app.add_option("--jobs", jobs, "parallel grid points")->check(CLI::PositiveNumber);
    app.add_option("--seed", seed, "run seed");
    auto* train = app.add_subcommand("train", "train a model");
    auto* evaluate = app.add_subcommand("eval", "clean accuracy of a checkpoint");
    auto* attack = app.add_subcommand("attack", "k-PGD robustness report");
    auto* reconstruct = app.add_subcommand("reconstruct", "reconstruct attacked inputs with the RAR head");
    auto* grid = app.add_subcommand("gridsearch", "FreeLB hyperparameter grid search");
    auto* synth = app.add_subcommand("synth", "write a synthetic keyword task");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? kExitOk : kExitConfig;
    }

    try {
        Config c = config_path.empty() ? Config() : Config::load(config_path);
        for (const auto& s : sets) c.set(s);
        if (seed) c.set("seed", std::to_string(*seed));
        if (train->parsed()) {
            cmd_train(c, out);
        } else if (evaluate->parsed()) {
            cmd_eval(c, out);
        } else if (attack->parsed()) {
            cmd_attack(c, out);
        } else if (reconstruct->parsed()) {
            cmd_reconstruct(c, out);
        } else if (grid->parsed()) {
            cmd_gridsearch(c, jobs, out);
        } else if (synth->parsed()) {
            cmd_synth(c, out);
        }
    } catch (const ConfigError& e) {
        err << "config error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const data::DataError& e) {
        err << "data error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const model::CheckpointError& e) {
        err << "checkpoint error: " << e.what() << "\n";
        return kExitConfig;
    } catch (const std::exception& e) {
        err << "error: " << e.what() << "\n";
        return kExitRuntime;
    }
    return kExitOk;
}

}  // namespace advrep::cli
