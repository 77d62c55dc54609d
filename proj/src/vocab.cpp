#include "stower/vocab.hpp"

#include <algorithm>
#include <cctype>
#include <map>

namespace stower {

namespace {
const std::vector<std::string> kReservedTokens = {"<pad>", "<s>", "</s>", "<mask>", "<unk>"};
}

std::vector<std::string> split_tokens(const std::string& raw) {
    std::vector<std::string> out;
    std::string current;
    for (char c : raw) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            if (!current.empty()) {
                out.push_back(current);
                current.clear();
            }
        } else {
            current.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
        }
    }
    if (!current.empty()) out.push_back(current);
    return out;
}

Vocab::Vocab() {
    id_to_token_ = kReservedTokens;
    for (std::int32_t i = 0; i < kNumReserved; ++i) token_to_id_[id_to_token_[static_cast<std::size_t>(i)]] = i;
}

Vocab Vocab::build(std::span<const std::string> lines, int min_count) {
    std::map<std::string, std::int64_t> counts;  // ordered map keeps ties deterministic
    for (const std::string& line : lines) {
        for (const std::string& tok : split_tokens(line)) ++counts[tok];
    }
    if (counts.empty()) throw DataError("build_vocab: corpus contains no tokens");

    std::vector<std::pair<std::string, std::int64_t>> entries(counts.begin(), counts.end());
    std::stable_sort(entries.begin(), entries.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });

    Vocab vocab;
    for (const auto& [tok, count] : entries) {
        if (count < min_count) continue;
        if (vocab.token_to_id_.contains(tok)) continue;  // reserved surface forms stay reserved
        vocab.token_to_id_[tok] = static_cast<std::int32_t>(vocab.id_to_token_.size());
        vocab.id_to_token_.push_back(tok);
    }
    return vocab;
}

Vocab Vocab::from_tokens(const std::vector<std::string>& id_to_token) {
    if (id_to_token.size() < static_cast<std::size_t>(kNumReserved)) {
        throw DataError("vocab snapshot too short");
    }
    for (std::int32_t i = 0; i < kNumReserved; ++i) {
        if (id_to_token[static_cast<std::size_t>(i)] != kReservedTokens[static_cast<std::size_t>(i)]) {
            throw DataError("vocab snapshot has remapped reserved token at id " + std::to_string(i));
        }
    }
    Vocab vocab;
    vocab.id_to_token_ = id_to_token;
    vocab.token_to_id_.clear();
    for (std::size_t i = 0; i < id_to_token.size(); ++i) {
        vocab.token_to_id_[id_to_token[i]] = static_cast<std::int32_t>(i);
    }
    return vocab;
}

std::int32_t Vocab::id(const std::string& token) const {
    auto it = token_to_id_.find(token);
    return it == token_to_id_.end() ? kUnk : it->second;
}

const std::string& Vocab::token(std::int32_t id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= id_to_token_.size()) {
        throw UsageError("vocab: id " + std::to_string(id) + " out of range");
    }
    return id_to_token_[static_cast<std::size_t>(id)];
}

bool Vocab::contains(const std::string& token) const {
    return token_to_id_.contains(token);
}

} // namespace stower
