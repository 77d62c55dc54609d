#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "stower/nn.hpp"

namespace stower {

/// Self-describing binary container: magic + version, a JSON header
/// (component layout, config echo, vocab snapshots, seed), then the raw
/// little-endian f32 payload. load(save(x)) is bitwise.
struct CheckpointComponent {
    std::string name;             // backbone | vae | style_table | scorer | char_lm | eval_classifier
    std::string meta_json;        // component config snapshot
    ParamMap params;
};

struct Checkpoint {
    static constexpr std::uint32_t kFormatVersion = 1;

    std::uint64_t seed = 0;
    std::string config_json = "{}";               // flat run-config echo
    std::vector<std::string> vocab_tokens;        // empty when not applicable
    std::vector<CheckpointComponent> components;

    const CheckpointComponent* find(const std::string& name) const;
    const CheckpointComponent& require(const std::string& name) const;
};

void save_checkpoint(const Checkpoint& checkpoint, const std::filesystem::path& path);

/// `want` filters components (empty = all). Corrupt or truncated files
/// raise IoError naming the missing section.
Checkpoint load_checkpoint(const std::filesystem::path& path,
                           const std::vector<std::string>& want = {});

/// FNV-1a over the payload bytes of one component's parameters.
std::uint64_t component_checksum(const CheckpointComponent& component);

} // namespace stower
