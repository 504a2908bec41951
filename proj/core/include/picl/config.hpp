#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

namespace picl {

// Flat "key = value" config file with '#' comments. Insertion-ordered so that
// saved run.lock files are stable and diffable.
class KVConfig {
public:
    void load(const std::string& path);
    void save(const std::string& path) const;

    void set(const std::string& key, const std::string& value);
    bool has(const std::string& key) const;

    std::string get_str(const std::string& key) const;
    std::string get_str(const std::string& key, const std::string& fallback) const;
    long get_int(const std::string& key, long fallback) const;
    uint64_t get_u64(const std::string& key, uint64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int> get_int_list(const std::string& key, const std::vector<int>& fallback) const;

    const std::vector<std::string>& keys() const { return order_; }

private:
    std::vector<std::string> order_;
    std::unordered_map<std::string, std::string> map_;
};

}  // namespace picl
