#pragma once

#include <filesystem>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "advrep/model/model.hpp"

namespace advrep::model {

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

/// Named tensors plus a text header of key/value pairs.
///
/// On disk: the magic line `ADVREP-CHECKPOINT 1`, then `key value` lines, then
/// an empty line. The binary section follows: a little-endian u32 record
/// count, then per record a u32 name length, the name bytes, a u32 rank, u64
/// dims and the values as little-endian IEEE-754 doubles.
struct Container {
    std::map<std::string, std::string> header;
    std::vector<std::pair<std::string, Tensor>> tensors;

    const Tensor& tensor(const std::string& name) const;
    const Tensor* find(const std::string& name) const;
};

void write_container(const std::filesystem::path& path, const Container& container);
Container read_container(const std::filesystem::path& path);

void put_config(Container& c, const ModelConfig& config);
ModelConfig get_config(const Container& c);

/// Model weights in a container, keyed by prefix + ModelParams::tensors() names.
void store_params(Container& c, const ModelParams& params, const std::string& prefix = "");
ModelParams load_params(const Container& c, const std::string& prefix = "");

void save_model(const std::filesystem::path& path, const ModelParams& params);
ModelParams load_model(const std::filesystem::path& path);

}  // namespace advrep::model
