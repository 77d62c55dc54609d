#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include "stower/errors.hpp"

namespace stower {

/// Whitespace-token vocabulary with fixed reserved ids. Reserved entries
/// are never remapped; everything else is ordered by frequency (desc),
/// ties broken lexicographically, so identical corpora always produce
/// identical id assignments.
class Vocab {
public:
    static constexpr std::int32_t kPad = 0;
    static constexpr std::int32_t kBos = 1;
    static constexpr std::int32_t kEos = 2;
    static constexpr std::int32_t kMask = 3;
    static constexpr std::int32_t kUnk = 4;
    static constexpr std::int32_t kNumReserved = 5;

    Vocab();

    static Vocab build(std::span<const std::string> lines, int min_count = 1);
    static Vocab from_tokens(const std::vector<std::string>& id_to_token);

    /// Token id, kUnk when absent.
    std::int32_t id(const std::string& token) const;
    const std::string& token(std::int32_t id) const;
    bool contains(const std::string& token) const;
    int size() const { return static_cast<int>(id_to_token_.size()); }

    const std::vector<std::string>& tokens() const { return id_to_token_; }

    bool operator==(const Vocab& other) const { return id_to_token_ == other.id_to_token_; }

private:
    std::vector<std::string> id_to_token_;
    std::unordered_map<std::string, std::int32_t> token_to_id_;
};

/// Lowercases and splits on whitespace.
std::vector<std::string> split_tokens(const std::string& raw);

} // namespace stower
