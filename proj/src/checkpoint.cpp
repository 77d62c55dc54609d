#include "stower/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include <json.hpp>

namespace stower {

namespace {
constexpr char kMagic[8] = {'S', 'T', 'W', 'R', 'C', 'K', 'P', 'T'};
}

const CheckpointComponent* Checkpoint::find(const std::string& name) const {
    for (const CheckpointComponent& c : components) {
        if (c.name == name) return &c;
    }
    return nullptr;
}

const CheckpointComponent& Checkpoint::require(const std::string& name) const {
    const CheckpointComponent* c = find(name);
    if (!c) throw IoError("checkpoint is missing component '" + name + "'");
    return *c;
}

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path) {
    nlohmann::json header;
    header["format_version"] = Checkpoint::kFormatVersion;
    header["seed"] = checkpoint.seed;
    header["config"] = nlohmann::json::parse(checkpoint.config_json);
    header["vocab"] = checkpoint.vocab_tokens;

    std::uint64_t offset = 0;
    nlohmann::json components = nlohmann::json::array();
    for (const CheckpointComponent& comp : checkpoint.components) {
        nlohmann::json jcomp;
        jcomp["name"] = comp.name;
        jcomp["meta"] = comp.meta_json.empty() ? nlohmann::json::object()
                                               : nlohmann::json::parse(comp.meta_json);
        nlohmann::json jparams = nlohmann::json::array();
        for (const auto& [name, tensor] : comp.params) {
            nlohmann::json jp;
            jp["name"] = name;
            jp["shape"] = tensor.shape();
            jp["offset"] = offset;
            jp["numel"] = tensor.size();
            offset += tensor.size();
            jparams.push_back(std::move(jp));
        }
        jcomp["params"] = std::move(jparams);
        components.push_back(std::move(jcomp));
    }
    header["components"] = std::move(components);
    header["payload_numel"] = offset;

    const std::string header_bytes = header.dump();
    const std::filesystem::path tmp = path.string() + ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary);
        if (!out) throw IoError("cannot write " + tmp.string());
        out.write(kMagic, sizeof(kMagic));
        const std::uint32_t version = Checkpoint::kFormatVersion;
        out.write(reinterpret_cast<const char*>(&version), sizeof(version));
        const std::uint64_t header_len = header_bytes.size();
        out.write(reinterpret_cast<const char*>(&header_len), sizeof(header_len));
        out.write(header_bytes.data(), static_cast<std::streamsize>(header_bytes.size()));
        for (const CheckpointComponent& comp : checkpoint.components) {
            for (const auto& [name, tensor] : comp.params) {
                out.write(reinterpret_cast<const char*>(tensor.data().data()),
                          static_cast<std::streamsize>(tensor.size() * sizeof(float)));
            }
        }
        if (!out) throw IoError("write failed for " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

Checkpoint load_checkpoint(const std::filesystem::path& path, const std::vector<std::string>& want) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open checkpoint " + path.string());

    char magic[8];
    if (!in.read(magic, sizeof(magic)) || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0) {
        throw IoError(path.string() + " is not a stower checkpoint (bad magic)");
    }
    std::uint32_t version = 0;
    if (!in.read(reinterpret_cast<char*>(&version), sizeof(version))) {
        throw IoError(path.string() + ": truncated before version field");
    }
    if (version != Checkpoint::kFormatVersion) {
        throw IoError(path.string() + ": unsupported checkpoint version " + std::to_string(version) +
                      " (expected " + std::to_string(Checkpoint::kFormatVersion) + ")");
    }
    std::uint64_t header_len = 0;
    if (!in.read(reinterpret_cast<char*>(&header_len), sizeof(header_len))) {
        throw IoError(path.string() + ": truncated before header length");
    }
    std::string header_bytes(header_len, '\0');
    if (!in.read(header_bytes.data(), static_cast<std::streamsize>(header_len))) {
        throw IoError(path.string() + ": truncated inside JSON header");
    }
    nlohmann::json header;
    try {
        header = nlohmann::json::parse(header_bytes);
    } catch (const nlohmann::json::exception& e) {
        throw IoError(path.string() + ": corrupt JSON header: " + e.what());
    }

    Checkpoint checkpoint;
    checkpoint.seed = header.value("seed", 0ull);
    checkpoint.config_json = header.contains("config") ? header["config"].dump() : "{}";
    if (header.contains("vocab")) {
        checkpoint.vocab_tokens = header["vocab"].get<std::vector<std::string>>();
    }

    for (const nlohmann::json& jcomp : header["components"]) {
        const std::string name = jcomp.at("name").get<std::string>();
        const bool wanted = want.empty() ||
                            std::find(want.begin(), want.end(), name) != want.end();
        CheckpointComponent comp;
        comp.name = name;
        comp.meta_json = jcomp.value("meta", nlohmann::json::object()).dump();
        for (const nlohmann::json& jp : jcomp.at("params")) {
            const std::string pname = jp.at("name").get<std::string>();
            const Shape shape = jp.at("shape").get<Shape>();
            const std::uint64_t offset = jp.at("offset").get<std::uint64_t>();
            const std::uint64_t numel = jp.at("numel").get<std::uint64_t>();
            if (shape_numel(shape) != numel) {
                throw IoError(path.string() + ": component '" + name + "' parameter '" + pname +
                              "' has inconsistent shape metadata");
            }
            if (!wanted) continue;
            std::vector<float> values(numel);
            const std::uint64_t payload_start = sizeof(kMagic) + sizeof(version) + sizeof(header_len) + header_len;
            in.seekg(static_cast<std::streamoff>(payload_start + offset * sizeof(float)));
            if (!in.read(reinterpret_cast<char*>(values.data()),
                         static_cast<std::streamsize>(numel * sizeof(float)))) {
                throw IoError(path.string() + ": payload truncated at component '" + name +
                              "' parameter '" + pname + "'");
            }
            comp.params.emplace_back(pname, Tensor::from_data(shape, std::move(values)));
        }
        if (wanted) checkpoint.components.push_back(std::move(comp));
    }
    return checkpoint;
}

std::uint64_t component_checksum(const CheckpointComponent& component) {
    std::uint64_t h = 1469598103934665603ull;
    auto mix = [&h](const void* data, std::size_t n) {
        const unsigned char* p = static_cast<const unsigned char*>(data);
        for (std::size_t i = 0; i < n; ++i) {
            h ^= p[i];
            h *= 1099511628211ull;
        }
    };
    for (const auto& [name, tensor] : component.params) {
        mix(name.data(), name.size());
        mix(tensor.data().data(), tensor.size() * sizeof(float));
    }
    return h;
}

} // namespace stower
