#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "advrep/adversary/adversary.hpp"
#include "advrep/model/model.hpp"
#include "advrep/trainer/trainer.hpp"

namespace advrep::cli {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Flat `key = value` configuration over a fixed key set. Lines starting with
/// `#` and blank lines are ignored; unknown keys are rejected.
class Config {
public:
    Config();  // every key at its default

    static Config load(const std::filesystem::path& path);
    /// Parse `key = value` text; `origin` prefixes error messages.
    void merge_text(const std::string& text, const std::string& origin);
    /// `key=value` from the command line.
    void set(const std::string& assignment);
    void set(const std::string& key, const std::string& value);

    const std::string& get(const std::string& key) const;
    bool has_value(const std::string& key) const { return !get(key).empty(); }
    double get_double(const std::string& key) const;
    std::size_t get_size(const std::string& key) const;
    bool get_bool(const std::string& key) const;
    std::vector<double> get_list(const std::string& key) const;

    /// Every key in sorted order, one `key = value` line each.
    std::string dump() const;
    void write(const std::filesystem::path& path) const;

    static const std::vector<std::string>& keys();

private:
    std::map<std::string, std::string> values_;
};

trainer::TrainConfig train_config(const Config& c);
adversary::AttackConfig attack_config(const Config& c, double epsilon);
std::vector<double> attack_epsilons(const Config& c);
/// Whether the reconstructor head is built: model.reconstructor = auto means
/// only for mode rar.
bool wants_reconstructor(const Config& c);

struct GridSpec {
    std::vector<double> gamma;
    std::vector<double> alpha;
    std::vector<double> epsilon;
    std::vector<std::size_t> n;
};

/// Grid lists from grid.* keys, checked against the search bounds
/// gamma in [0, 0.8], alpha in [0.01, 0.2], epsilon in [0, 0.5], n in {2, 3, 4}.
GridSpec grid_spec(const Config& c);

}  // namespace advrep::cli
