#include "advrep/cli/config.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

namespace advrep::cli {

namespace {

const std::vector<std::pair<std::string, std::string>>& defaults() {
    static const std::vector<std::pair<std::string, std::string>> table = {
        {"mode", "plain"},
        {"seed", "0"},
        {"learning_rate", "1e-5"},
        {"batch_size", "32"},
        {"max_steps", "1000"},
        {"eval_every", "100"},
        {"w_r", "0.1"},
        {"freelb.gamma", "0.6"},
        {"freelb.alpha", "0.1"},
        {"freelb.epsilon", "0"},
        {"freelb.n", "2"},
        {"carl.m", "128"},
        {"carl.temperature", "0.07"},
        {"carl.momentum", "0.5"},
        {"carl.start_step", "0"},
        {"carl.include_positive_in_denominator", "false"},
        {"model.embed_dim", "32"},
        {"model.hidden_dim", "32"},
        {"model.max_len", "16"},
        {"model.reconstructor", "auto"},
        {"attack.k", "3"},
        {"attack.alpha", "0.1"},
        {"attack.epsilon", "0.1"},
        {"attack.gamma", "0"},
        {"attack.seed", "0"},
        {"data.train", ""},
        {"data.dev", ""},
        {"data.test", ""},
        {"data.min_freq", "1"},
        {"out_dir", "run"},
        {"checkpoint", ""},
        {"baseline", ""},
        {"report", ""},
        {"resume", ""},
        {"grid.gamma", "0.6"},
        {"grid.alpha", "0.1"},
        {"grid.epsilon", "0"},
        {"grid.n", "2"},
        {"synth.train_size", "2000"},
        {"synth.dev_size", "500"},
        {"synth.words", "197"},
        {"synth.classes", "2"},
    };
    return table;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

}  // namespace

Config::Config() {
    for (const auto& [k, v] : defaults()) values_[k] = v;
}

const std::vector<std::string>& Config::keys() {
    static const std::vector<std::string> names = [] {
        std::vector<std::string> out;
        for (const auto& [k, v] : defaults()) out.push_back(k);
        std::sort(out.begin(), out.end());
        return out;
    }();
    return names;
}

Config Config::load(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot read config file " + path.string());
    std::ostringstream text;
    text << in.rdbuf();
    Config c;
    c.merge_text(text.str(), path.string());
    return c;
}

void Config::merge_text(const std::string& text, const std::string& origin) {
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        const auto eq = t.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": expected 'key = value', got '" + t + "'");
        }
        try {
            set(trim(t.substr(0, eq)), trim(t.substr(eq + 1)));
        } catch (const ConfigError& e) {
            throw ConfigError(origin + ":" + std::to_string(lineno) + ": " + e.what());
        }
    }
}

void Config::set(const std::string& assignment) {
    const auto eq = assignment.find('=');
    if (eq == std::string::npos) throw ConfigError("--set expects key=value, got '" + assignment + "'");
    set(trim(assignment.substr(0, eq)), trim(assignment.substr(eq + 1)));
}

void Config::set(const std::string& key, const std::string& value) {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    it->second = value;
}

const std::string& Config::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw ConfigError("unknown config key '" + key + "'");
    return it->second;
}

double Config::get_double(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t used = 0;
        double d = std::stod(v, &used);
        if (used != v.size() || !std::isfinite(d)) throw std::invalid_argument(v);
        return d;
    } catch (const std::exception&) {
        throw ConfigError(key + ": expected a number, got '" + v + "'");
    }
}

std::size_t Config::get_size(const std::string& key) const {
    const std::string& v = get(key);
    if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
        throw ConfigError(key + ": expected a non-negative integer, got '" + v + "'");
    }
    return static_cast<std::size_t>(std::stoull(v));
}

bool Config::get_bool(const std::string& key) const {
    const std::string& v = get(key);
    if (v == "true" || v == "1") return true;
    if (v == "false" || v == "0") return false;
    throw ConfigError(key + ": expected true or false, got '" + v + "'");
}

std::vector<double> Config::get_list(const std::string& key) const {
    std::vector<double> out;
    std::istringstream in(get(key));
    std::string item;
    while (std::getline(in, item, ',')) {
        item = trim(item);
        try {
            std::size_t used = 0;
            double d = std::stod(item, &used);
            if (used != item.size()) throw std::invalid_argument(item);
            out.push_back(d);
        } catch (const std::exception&) {
            throw ConfigError(key + ": expected a comma-separated list of numbers, got '" + get(key) + "'");
        }
    }
    if (out.empty()) throw ConfigError(key + ": empty list");
    return out;
}

std::string Config::dump() const {
    std::string out;
    for (const auto& k : keys()) out += k + " = " + values_.at(k) + "\n";
    return out;
}

void Config::write(const std::filesystem::path& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << dump();
}

trainer::TrainConfig train_config(const Config& c) {
    trainer::TrainConfig t;
    try {
        t.mode = trainer::parse_mode(c.get("mode"));
    } catch (const std::invalid_argument& e) {
        throw ConfigError(std::string("mode: ") + e.what());
    }
    t.seed = c.get_size("seed");
    t.learning_rate = c.get_double("learning_rate");
    t.batch_size = c.get_size("batch_size");
    t.max_steps = c.get_size("max_steps");
    t.eval_every = c.get_size("eval_every");
    t.w_r = c.get_double("w_r");
    t.freelb.gamma = c.get_double("freelb.gamma");
    t.freelb.alpha = c.get_double("freelb.alpha");
    t.freelb.epsilon = c.get_double("freelb.epsilon");
    t.freelb.n_steps = c.get_size("freelb.n");
    t.carl.m = c.get_size("carl.m");
    t.carl.temperature = c.get_double("carl.temperature");
    t.carl.momentum = c.get_double("carl.momentum");
    t.carl.start_step = c.get_size("carl.start_step");
    t.carl.include_positive_in_denominator = c.get_bool("carl.include_positive_in_denominator");
    try {
        t.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return t;
}

adversary::AttackConfig attack_config(const Config& c, double epsilon) {
    adversary::AttackConfig a;
    a.k_steps = c.get_size("attack.k");
    a.alpha = c.get_double("attack.alpha");
    a.epsilon = epsilon;
    a.gamma = c.get_double("attack.gamma");
    a.seed = c.get_size("attack.seed");
    try {
        a.validate();
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    }
    return a;
}

std::vector<double> attack_epsilons(const Config& c) { return c.get_list("attack.epsilon"); }

bool wants_reconstructor(const Config& c) {
    const std::string& v = c.get("model.reconstructor");
    if (v == "auto") return c.get("mode") == "rar";
    return c.get_bool("model.reconstructor");
}

namespace {

void check_bounds(const std::vector<double>& values, double lo, double hi, const char* key) {
    for (double v : values) {
        if (v < lo || v > hi) {
            std::ostringstream os;
            os << key << ": value " << v << " outside the search bounds [" << lo << ", " << hi << "]";
            throw ConfigError(os.str());
        }
    }
}

}  // namespace

GridSpec grid_spec(const Config& c) {
    GridSpec g;
    g.gamma = c.get_list("grid.gamma");
    g.alpha = c.get_list("grid.alpha");
    g.epsilon = c.get_list("grid.epsilon");
    check_bounds(g.gamma, 0.0, 0.8, "grid.gamma");
    check_bounds(g.alpha, 0.01, 0.2, "grid.alpha");
    check_bounds(g.epsilon, 0.0, 0.5, "grid.epsilon");
    for (double v : c.get_list("grid.n")) {
        if (v != 2.0 && v != 3.0 && v != 4.0) {
            std::ostringstream os;
            os << "grid.n: value " << v << " outside the search set {2, 3, 4}";
            throw ConfigError(os.str());
        }
        g.n.push_back(static_cast<std::size_t>(v));
    }
    return g;
}

}  // namespace advrep::cli
