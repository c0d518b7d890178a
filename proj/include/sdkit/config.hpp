#pragma once

#include <map>
#include <string>

namespace sdkit {

// Flat key = value configuration. Lines starting with '#' are comments.
// Environment variables prefixed SDK_ override file values (SDK_EPOCHS
// maps to the key "epochs").
class Config {
public:
    Config() = default;

    static Config from_file(const std::string& path);
    static Config from_string(const std::string& text);

    void apply_env_overrides(const std::string& prefix = "SDK_");

    bool has(const std::string& key) const { return kv_.count(key) != 0; }
    void set(const std::string& key, const std::string& value) { kv_[key] = value; }

    std::string get_str(const std::string& key, const std::string& fallback) const;
    int get_int(const std::string& key, int fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;

    // typed access that throws on malformed values
    int require_int(const std::string& key) const;
    double require_double(const std::string& key) const;

    std::string serialize() const;
    const std::map<std::string, std::string>& entries() const { return kv_; }

private:
    std::map<std::string, std::string> kv_;
};

} // namespace sdkit
