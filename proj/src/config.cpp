#include "stower/config.hpp"

#include <algorithm>
#include <array>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace stower {

namespace {

// every known key with its default (Appendix-style values where they apply)
const std::array<std::pair<const char*, const char*>, 49> kDefaults = {{
    {"seed", "7"},
    {"corpus.max_len", "64"},
    {"corpus.min_count", "1"},
    {"data.n_per_style", "1000"},
    {"backbone.mode", "mlm"},            // mlm | identity
    {"backbone.trainable", "false"},
    {"backbone.layers", "2"},
    {"backbone.d_model", "64"},
    {"backbone.heads", "2"},
    {"backbone.ffn_dim", "128"},
    {"backbone.mask_rate", "0.15"},
    {"backbone.epochs", "20"},
    {"backbone.lr", "0.001"},
    {"backbone.token_budget", "8092"},
    {"vae.d_latent", "64"},
    {"vae.layers", "2"},
    {"vae.heads", "2"},
    {"vae.ffn_dim", "256"},
    {"train.lambda_vae", "1"},
    {"train.lambda_style", "1"},
    {"train.beta", "1"},
    {"train.lr", "0.0005"},
    {"train.token_budget", "8092"},
    {"train.stage1_epochs", "30"},
    {"train.stage2_epochs", "15"},
    {"train.stage2_mask_fraction", "0.5"},
    {"train.stage2_lr_scale", "0.5"},
    {"train.kl_warmup_frac", "0.1"},
    {"train.clip_norm", "1.0"},
    {"train.patience", "3"},
    {"train.holdout_frac", "0.05"},
    {"train.early_stop", "true"},
    {"scorer.heads", "2"},
    {"scorer.ffn_dim", "128"},
    {"scorer.gamma", "0.05"},
    {"scorer.epochs", "3"},
    {"scorer.lr", "0.001"},
    {"scorer.token_budget", "2048"},
    {"scorer.holdout_frac", "0.1"},
    {"charlm.hidden", "48"},
    {"charlm.embed", "24"},
    {"charlm.epochs", "3"},
    {"charlm.lr", "0.005"},
    {"charlm.batch", "64"},
    {"evalcls.hash_bits", "18"},
    {"evalcls.epochs", "5"},
    {"evalcls.lr", "0.5"},
    {"evalcls.holdout_frac", "0.1"},
    {"transfer.max_len", "64"},
}};

std::string trim(const std::string& s) {
    std::size_t a = s.find_first_not_of(" \t\r\n");
    std::size_t b = s.find_last_not_of(" \t\r\n");
    return a == std::string::npos ? "" : s.substr(a, b - a + 1);
}

} // namespace

ConfigMap ConfigMap::defaults() {
    ConfigMap config;
    for (const auto& [key, value] : kDefaults) config.values_[key] = value;
    return config;
}

ConfigMap ConfigMap::from_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw IoError("cannot open config " + path.string());
    std::stringstream buffer;
    buffer << in.rdbuf();
    ConfigMap config = defaults();
    config.apply_text(buffer.str());
    return config;
}

void ConfigMap::apply_text(const std::string& text) {
    std::istringstream in(text);
    std::string line;
    int lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        const std::size_t hash = line.find('#');
        if (hash != std::string::npos) line.resize(hash);
        const std::string trimmed = trim(line);
        if (trimmed.empty()) continue;
        const std::size_t eq = trimmed.find('=');
        if (eq == std::string::npos) {
            throw UsageError("config line " + std::to_string(lineno) + ": expected 'key = value'");
        }
        set(trim(trimmed.substr(0, eq)), trim(trimmed.substr(eq + 1)));
    }
}

void ConfigMap::set(const std::string& key, const std::string& value) {
    if (!values_.contains(key)) throw UsageError("unknown config key '" + key + "'");
    values_[key] = value;
}

const std::string& ConfigMap::get(const std::string& key) const {
    auto it = values_.find(key);
    if (it == values_.end()) throw UsageError("unknown config key '" + key + "'");
    return it->second;
}

double ConfigMap::get_num(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t used = 0;
        const double out = std::stod(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "' has non-numeric value '" + v + "'");
    }
}

int ConfigMap::get_int(const std::string& key) const {
    const double v = get_num(key);
    const int i = static_cast<int>(v);
    if (static_cast<double>(i) != v) {
        throw UsageError("config key '" + key + "' must be an integer, got '" + get(key) + "'");
    }
    return i;
}

std::uint64_t ConfigMap::get_u64(const std::string& key) const {
    const std::string& v = get(key);
    try {
        std::size_t used = 0;
        const std::uint64_t out = std::stoull(v, &used);
        if (used != v.size()) throw std::invalid_argument(v);
        return out;
    } catch (const std::exception&) {
        throw UsageError("config key '" + key + "' must be a non-negative integer, got '" + v + "'");
    }
}

bool ConfigMap::get_bool(const std::string& key) const {
    std::string v = get(key);
    std::transform(v.begin(), v.end(), v.begin(), [](unsigned char c) { return std::tolower(c); });
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw UsageError("config key '" + key + "' must be boolean, got '" + get(key) + "'");
}

std::string ConfigMap::echo_json() const {
    nlohmann::json j;
    for (const auto& [key, value] : values_) j[key] = value;
    return j.dump();
}

} // namespace stower
