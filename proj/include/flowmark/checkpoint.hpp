#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include <json.hpp>

#include "flowmark/tensor.hpp"

namespace flowmark {

// Single-file checkpoint archive:
//   8-byte magic "FMCKPT\n" + format byte, u64 header length, JSON header,
//   then little-endian float32 tensor data back to back.
// The header carries a mandatory "version" field, the model configs, and a
// tensor index with shapes and offsets. Encoder, decoder, adversary and
// optimizer state all share the same archive.
inline constexpr char kCheckpointMagic[8] = {'F', 'M', 'C', 'K', 'P', 'T', '\n', 1};
inline constexpr int kCheckpointVersion = 1;

struct CheckpointData {
    nlohmann::ordered_json header;  // configs + metadata (no tensor index)
    std::vector<std::pair<std::string, TensorT<float>>> tensors;

    const TensorT<float>& tensor(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return t;
        throw Error("checkpoint: missing tensor " + name);
    }

    bool has_tensor(const std::string& name) const {
        for (const auto& [n, t] : tensors)
            if (n == name) return true;
        return false;
    }
};

inline void save_checkpoint(const std::string& path, const CheckpointData& data) {
    nlohmann::ordered_json header = data.header;
    header["version"] = kCheckpointVersion;
    nlohmann::ordered_json index = nlohmann::ordered_json::array();
    std::uint64_t offset = 0;
    for (const auto& [name, t] : data.tensors) {
        index.push_back({{"name", name}, {"shape", t.shape}, {"offset", offset}});
        offset += t.numel() * sizeof(float);
    }
    header["tensors"] = index;
    std::string htxt = header.dump();

    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error("checkpoint: cannot write " + path);
    f.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    std::uint64_t hlen = htxt.size();
    f.write(reinterpret_cast<const char*>(&hlen), sizeof(hlen));
    f.write(htxt.data(), static_cast<std::streamsize>(htxt.size()));
    for (const auto& [name, t] : data.tensors)
        f.write(reinterpret_cast<const char*>(t.data.data()),
                static_cast<std::streamsize>(t.numel() * sizeof(float)));
    if (!f) throw Error("checkpoint: write failed for " + path);
}

inline CheckpointData load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw Error("checkpoint: cannot open " + path);
    char magic[8];
    f.read(magic, sizeof(magic));
    if (!f || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw Error("checkpoint: bad magic in " + path);
    std::uint64_t hlen = 0;
    f.read(reinterpret_cast<char*>(&hlen), sizeof(hlen));
    std::string htxt(hlen, '\0');
    f.read(htxt.data(), static_cast<std::streamsize>(hlen));
    if (!f) throw Error("checkpoint: truncated header in " + path);

    nlohmann::ordered_json header = nlohmann::ordered_json::parse(htxt);
    if (!header.contains("version")) throw Error("checkpoint: missing version field");
    if (header["version"].get<int>() != kCheckpointVersion)
        throw Error("checkpoint: unsupported version " + header["version"].dump());

    CheckpointData out;
    nlohmann::ordered_json index = header["tensors"];
    header.erase("tensors");
    out.header = std::move(header);
    for (const auto& e : index) {
        std::vector<int> shape = e["shape"].get<std::vector<int>>();
        TensorT<float> t(shape);
        f.read(reinterpret_cast<char*>(t.data.data()),
               static_cast<std::streamsize>(t.numel() * sizeof(float)));
        if (!f) throw Error("checkpoint: truncated tensor data in " + path);
        out.tensors.emplace_back(e["name"].get<std::string>(), std::move(t));
    }
    return out;
}

}  // namespace flowmark
