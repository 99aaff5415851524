#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "bulkspace/errors.hpp"

namespace bulkspace {

// Flat key-value experiment configuration. Lines look like
//
//   problem.kind = quadratic   # comment
//
// Keys are dotted paths, values are scalars or comma-separated lists.
// Unknown keys are rejected, not ignored. Serialization is canonical
// (sorted keys), so parse -> serialize -> parse is a fixed point.
class Config {
public:
    static Config parse_file(const std::string& path);
    static Config parse_string(const std::string& text);

    std::string serialize() const;

    bool has(const std::string& key) const { return kv_.count(key) > 0; }
    void set(const std::string& key, const std::string& value);

    std::string get_str(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    double get_double(const std::string& key) const;
    double get_double(const std::string& key, double fallback) const;
    int64_t get_int(const std::string& key) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    uint64_t get_uint(const std::string& key, uint64_t fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<double> get_double_list(const std::string& key) const;
    std::vector<std::string> get_str_list(const std::string& key) const;

    const std::map<std::string, std::string>& entries() const { return kv_; }

    // Throws ConfigError naming the first key outside the schema.
    void check_known_keys() const;

private:
    std::map<std::string, std::string> kv_;
};

} // namespace bulkspace
