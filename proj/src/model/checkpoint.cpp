#include "advrep/model/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>

namespace advrep::model {

namespace {

constexpr const char* kMagic = "ADVREP-CHECKPOINT 1";

template <class T>
T to_little(T v) {
    if constexpr (std::endian::native == std::endian::big) {
        auto bytes = std::bit_cast<std::array<unsigned char, sizeof(T)>>(v);
        std::reverse(bytes.begin(), bytes.end());
        return std::bit_cast<T>(bytes);
    }
    return v;
}

template <class T>
void put(std::ostream& out, T v) {
    v = to_little(v);
    out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <class T>
T get(std::istream& in) {
    T v{};
    in.read(reinterpret_cast<char*>(&v), sizeof v);
    if (!in) throw CheckpointError("checkpoint truncated");
    return to_little(v);
}

std::size_t header_size(const Container& c, const std::string& key) {
    auto it = c.header.find(key);
    if (it == c.header.end()) throw CheckpointError("checkpoint header missing '" + key + "'");
    try {
        return static_cast<std::size_t>(std::stoull(it->second));
    } catch (const std::exception&) {
        throw CheckpointError("checkpoint header '" + key + "' is not an integer: " + it->second);
    }
}

}  // namespace

const Tensor* Container::find(const std::string& name) const {
    for (const auto& [n, t] : tensors) {
        if (n == name) return &t;
    }
    return nullptr;
}

const Tensor& Container::tensor(const std::string& name) const {
    if (const Tensor* t = find(name)) return *t;
    throw CheckpointError("checkpoint has no tensor '" + name + "'");
}

void write_container(const std::filesystem::path& path, const Container& container) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot open " + path.string() + " for writing");
    out << kMagic << '\n';
    for (const auto& [k, v] : container.header) {
        if (k.find_first_of(" \n") != std::string::npos || v.find('\n') != std::string::npos) {
            throw CheckpointError("header entry '" + k + "' cannot be stored");
        }
        out << k << ' ' << v << '\n';
    }
    out << '\n';
    put<std::uint32_t>(out, static_cast<std::uint32_t>(container.tensors.size()));
    for (const auto& [name, t] : container.tensors) {
        put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
        out.write(name.data(), static_cast<std::streamsize>(name.size()));
        put<std::uint32_t>(out, static_cast<std::uint32_t>(t.rank()));
        for (auto d : t.shape()) put<std::uint64_t>(out, d);
        for (double v : t.values()) put<double>(out, v);
    }
    if (!out) throw CheckpointError("failed writing " + path.string());
}

Container read_container(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::string line;
    if (!std::getline(in, line) || line != kMagic) throw CheckpointError(path.string() + " is not a checkpoint");
    Container c;
    while (std::getline(in, line) && !line.empty()) {
        auto space = line.find(' ');
        if (space == std::string::npos) throw CheckpointError("malformed checkpoint header line: " + line);
        c.header[line.substr(0, space)] = line.substr(space + 1);
    }
    const auto count = get<std::uint32_t>(in);
    for (std::uint32_t r = 0; r < count; ++r) {
        const auto name_len = get<std::uint32_t>(in);
        std::string name(name_len, '\0');
        in.read(name.data(), name_len);
        const auto rank = get<std::uint32_t>(in);
        nx::Shape shape(rank);
        for (auto& d : shape) d = static_cast<std::size_t>(get<std::uint64_t>(in));
        std::vector<double> values(nx::shape_size(shape));
        for (double& v : values) v = get<double>(in);
        c.tensors.emplace_back(std::move(name), Tensor(std::move(shape), std::move(values)));
    }
    return c;
}

void put_config(Container& c, const ModelConfig& config) {
    c.header["vocab_size"] = std::to_string(config.vocab_size);
    c.header["embed_dim"] = std::to_string(config.embed_dim);
    c.header["hidden_dim"] = std::to_string(config.hidden_dim);
    c.header["num_classes"] = std::to_string(config.num_classes);
    c.header["max_len"] = std::to_string(config.max_len);
    c.header["reconstructor"] = config.reconstructor ? "1" : "0";
}

ModelConfig get_config(const Container& c) {
    ModelConfig config;
    config.vocab_size = header_size(c, "vocab_size");
    config.embed_dim = header_size(c, "embed_dim");
    config.hidden_dim = header_size(c, "hidden_dim");
    config.num_classes = header_size(c, "num_classes");
    config.max_len = header_size(c, "max_len");
    config.reconstructor = header_size(c, "reconstructor") != 0;
    config.validate();
    return config;
}

void store_params(Container& c, const ModelParams& params, const std::string& prefix) {
    put_config(c, params.config);
    for (const auto& nt : params.tensors()) c.tensors.emplace_back(prefix + nt.name, *nt.tensor);
}

ModelParams load_params(const Container& c, const std::string& prefix) {
    ModelConfig config = get_config(c);
    ModelParams p = init_params(config, 0);
    for (auto& nt : p.tensors()) {
        const Tensor& stored = c.tensor(prefix + nt.name);
        if (stored.shape() != nt.tensor->shape()) {
            throw CheckpointError("tensor '" + nt.name + "' has shape " + nx::shape_string(stored.shape()) +
                                  ", config implies " + nx::shape_string(nt.tensor->shape()));
        }
        *nt.tensor = stored;
    }
    return p;
}

void save_model(const std::filesystem::path& path, const ModelParams& params) {
    Container c;
    c.header["kind"] = "model";
    store_params(c, params);
    write_container(path, c);
}

ModelParams load_model(const std::filesystem::path& path) { return load_params(read_container(path)); }

}  // namespace advrep::model
