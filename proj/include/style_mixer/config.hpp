#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "style_mixer/common.hpp"

namespace style_mixer {

/// Flat `key = value` text config. Blank lines and lines starting with '#'
/// are ignored; later keys override earlier ones.
class KeyValueConfig {
public:
    static KeyValueConfig parse(const std::string& text, const std::string& source = "<string>");
    static KeyValueConfig load(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values_.count(key) != 0; }
    void set(const std::string& key, std::string value) { values_[key] = std::move(value); }

    std::string get_string(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key, double fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;

    const std::map<std::string, std::string>& values() const { return values_; }
    const std::string& source() const { return source_; }

private:
    std::map<std::string, std::string> values_;
    std::string source_;
};

}  // namespace style_mixer
