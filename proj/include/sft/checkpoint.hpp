#pragma once

// Single-file checkpoint archive: magic, little-endian u64 header length,
// JSON header (config, step counter, RNG state, tensor index), then the
// concatenated raw little-endian tensor payloads.

#include <fstream>
#include <map>

#include "sft/model.hpp"

namespace sft {

constexpr char kCheckpointMagic[8] = {'S', 'F', 'T', 'C', 'K', 'P', 'T', '1'};

template <typename S>
const char* dtype_tag() {
    if constexpr (sizeof(S) == 4) return "f32le";
    else return "f64le";
}

template <typename S>
void save_checkpoint(const std::filesystem::path& file, const ModelConfig& cfg, int64_t step,
                     const std::string& rng_state,
                     const std::vector<std::pair<std::string, Tensor<S>>>& tensors) {
    nlohmann::json header;
    header["config"] = cfg;
    header["step"] = step;
    header["rng_state"] = rng_state;
    header["dtype"] = dtype_tag<S>();
    uint64_t offset = 0;
    nlohmann::json index = nlohmann::json::array();
    for (const auto& [name, t] : tensors) {
        uint64_t nbytes = static_cast<uint64_t>(t.numel()) * sizeof(S);
        index.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
        offset += nbytes;
    }
    header["tensors"] = index;
    std::string hs = header.dump();

    std::ofstream f(file, std::ios::binary);
    if (!f) throw std::runtime_error("save_checkpoint: cannot open " + file.string());
    f.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    uint64_t hlen = hs.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(hs.data(), static_cast<std::streamsize>(hs.size()));
    for (const auto& [name, t] : tensors)
        f.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(S)));
    if (!f.good()) throw std::runtime_error("save_checkpoint: write failed for " + file.string());
}

template <typename S>
struct LoadedCheckpoint {
    ModelConfig config;
    int64_t step = 0;
    std::string rng_state;
    std::map<std::string, Tensor<S>> tensors;
};

template <typename S>
LoadedCheckpoint<S> load_checkpoint(const std::filesystem::path& file) {
    std::ifstream f(file, std::ios::binary);
    if (!f) throw std::runtime_error("load_checkpoint: cannot open " + file.string());
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f.good() || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw format_error("load_checkpoint: bad magic in " + file.string());
    uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string hs(hlen, '\0');
    f.read(hs.data(), static_cast<std::streamsize>(hlen));
    if (!f.good()) throw format_error("load_checkpoint: truncated header");
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(hs);
    } catch (const nlohmann::json::exception& e) {
        throw format_error("load_checkpoint: bad header: " + std::string(e.what()));
    }
    LoadedCheckpoint<S> out;
    out.config = header.at("config").get<ModelConfig>();
    out.step = header.at("step");
    out.rng_state = header.value("rng_state", "");
    if (header.value("dtype", "") != dtype_tag<S>())
        throw format_error("load_checkpoint: dtype mismatch, file has " +
                           header.value("dtype", std::string("?")));
    for (const auto& e : header.at("tensors")) {
        std::vector<int64_t> shape = e.at("shape").get<std::vector<int64_t>>();
        Tensor<S> t(shape);
        f.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(S)));
        if (!f.good()) throw format_error("load_checkpoint: truncated payload");
        out.tensors.emplace(e.at("name").get<std::string>(), std::move(t));
    }
    return out;
}

// copy checkpoint tensors into an existing parameter set (shapes must match)
template <typename S>
void restore_params(const LoadedCheckpoint<S>& ck, const NamedParams<S>& params) {
    for (const auto& [name, p] : params) {
        auto it = ck.tensors.find(name);
        if (it == ck.tensors.end())
            throw format_error("restore_params: checkpoint is missing tensor " + name);
        if (it->second.shape != p->value.shape)
            throw format_error("restore_params: shape mismatch for " + name);
        p->value = it->second;
    }
}

}  // namespace sft
