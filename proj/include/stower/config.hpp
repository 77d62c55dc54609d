#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>

#include "stower/errors.hpp"

namespace stower {

/// Flat `section.key = value` run configuration. Every key has a
/// registered default; unknown keys are rejected outright so typos never
/// silently fall back.
class ConfigMap {
public:
    static ConfigMap defaults();
    static ConfigMap from_file(const std::filesystem::path& path);

    /// Parses `key = value` lines ('#' comments allowed) on top of the
    /// current values.
    void apply_text(const std::string& text);
    void set(const std::string& key, const std::string& value);

    const std::string& get(const std::string& key) const;
    double get_num(const std::string& key) const;
    int get_int(const std::string& key) const;
    std::uint64_t get_u64(const std::string& key) const;
    bool get_bool(const std::string& key) const;

    const std::map<std::string, std::string>& entries() const { return values_; }
    std::string echo_json() const;

private:
    std::map<std::string, std::string> values_;
};

} // namespace stower
