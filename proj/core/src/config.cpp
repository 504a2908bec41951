#include "picl/config.hpp"

#include <fstream>
#include <sstream>
#include <stdexcept>

namespace picl {

namespace {

std::string trim(const std::string& s) {
    size_t a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    size_t b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

}  // namespace

void KVConfig::load(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("config: cannot open " + path);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        size_t hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        std::string t = trim(line);
        if (t.empty()) continue;
        size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) + ": expected key = value");
        }
        std::string key = trim(t.substr(0, eq));
        std::string value = trim(t.substr(eq + 1));
        if (key.empty()) {
            throw std::runtime_error("config: " + path + ":" + std::to_string(lineno) + ": empty key");
        }
        set(key, value);
    }
}

void KVConfig::save(const std::string& path) const {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("config: cannot write " + path);
    for (const std::string& k : order_) os << k << " = " << map_.at(k) << "\n";
    if (!os) throw std::runtime_error("config: write failed for " + path);
}

void KVConfig::set(const std::string& key, const std::string& value) {
    if (!map_.count(key)) order_.push_back(key);
    map_[key] = value;
}

bool KVConfig::has(const std::string& key) const { return map_.count(key) != 0; }

std::string KVConfig::get_str(const std::string& key) const {
    auto it = map_.find(key);
    if (it == map_.end()) throw std::runtime_error("config: missing key '" + key + "'");
    return it->second;
}

std::string KVConfig::get_str(const std::string& key, const std::string& fallback) const {
    auto it = map_.find(key);
    return it == map_.end() ? fallback : it->second;
}

long KVConfig::get_int(const std::string& key, long fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get_str(key);
    size_t pos = 0;
    long out = std::stol(v, &pos);
    if (pos != v.size()) throw std::runtime_error("config: key '" + key + "' is not an integer: " + v);
    return out;
}

uint64_t KVConfig::get_u64(const std::string& key, uint64_t fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get_str(key);
    size_t pos = 0;
    unsigned long long out = std::stoull(v, &pos);
    if (pos != v.size()) throw std::runtime_error("config: key '" + key + "' is not an integer: " + v);
    return out;
}

double KVConfig::get_double(const std::string& key, double fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get_str(key);
    size_t pos = 0;
    double out = std::stod(v, &pos);
    if (pos != v.size()) throw std::runtime_error("config: key '" + key + "' is not a number: " + v);
    return out;
}

bool KVConfig::get_bool(const std::string& key, bool fallback) const {
    if (!has(key)) return fallback;
    const std::string v = get_str(key);
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw std::runtime_error("config: key '" + key + "' is not a boolean: " + v);
}

std::vector<int> KVConfig::get_int_list(const std::string& key, const std::vector<int>& fallback) const {
    if (!has(key)) return fallback;
    std::vector<int> out;
    std::stringstream ss(get_str(key));
    std::string item;
    while (std::getline(ss, item, ',')) {
        std::string t;
        for (char c : item) {
            if (c != ' ' && c != '\t') t += c;
        }
        if (t.empty()) throw std::runtime_error("config: key '" + key + "' has an empty list element");
        out.push_back(static_cast<int>(std::stol(t)));
    }
    if (out.empty()) throw std::runtime_error("config: key '" + key + "' is an empty list");
    return out;
}

}  // namespace picl
