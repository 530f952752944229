#pragma once

#include <cstdlib>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sfsod/errors.hpp"

namespace sfsod {

/// The CLI configuration format: one `key = value` pair per line, `#` starts
/// a comment, values may be comma-separated lists. Duplicate keys are errors.
class KeyValueConfig {
  public:
    KeyValueConfig() = default;

    static KeyValueConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw InvalidConfig("cannot open config file: " + path);
        std::ostringstream ss;
        ss << in.rdbuf();
        return parse(ss.str(), path);
    }

    static KeyValueConfig parse(const std::string& text, const std::string& origin = "<config>") {
        KeyValueConfig cfg;
        cfg.origin_ = origin;
        std::istringstream in(text);
        std::string line;
        int line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string trimmed = trim(line);
            if (trimmed.empty()) continue;
            const auto eq = trimmed.find('=');
            if (eq == std::string::npos)
                throw InvalidConfig(origin + ": line " + std::to_string(line_no) +
                                    ": expected 'key = value'");
            const std::string key = trim(trimmed.substr(0, eq));
            const std::string value = trim(trimmed.substr(eq + 1));
            if (key.empty())
                throw InvalidConfig(origin + ": line " + std::to_string(line_no) + ": empty key");
            if (cfg.values_.count(key))
                throw InvalidConfig(origin + ": line " + std::to_string(line_no) +
                                    ": duplicate key '" + key + "'");
            cfg.values_[key] = value;
        }
        return cfg;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    std::string require_string(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw InvalidConfig(origin_ + ": missing required key '" + key + "'");
        return it->second;
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : to_double(key, it->second);
    }

    long long get_int(const std::string& key, long long fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        const double v = to_double(key, it->second);
        const long long i = static_cast<long long>(v);
        if (static_cast<double>(i) != v)
            throw InvalidConfig(origin_ + ": key '" + key + "' must be an integer");
        return i;
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        throw InvalidConfig(origin_ + ": key '" + key + "' must be true/false");
    }

    std::vector<double> get_double_list(const std::string& key,
                                        const std::vector<double>& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<double> out;
        std::istringstream ss(it->second);
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(to_double(key, trim(item)));
        if (out.empty()) throw InvalidConfig(origin_ + ": key '" + key + "' has an empty list");
        return out;
    }

    std::vector<std::string> get_string_list(const std::string& key,
                                             const std::vector<std::string>& fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        std::vector<std::string> out;
        std::istringstream ss(it->second);
        std::string item;
        while (std::getline(ss, item, ',')) out.push_back(trim(item));
        return out;
    }

    const std::map<std::string, std::string>& entries() const { return values_; }
    const std::string& origin() const { return origin_; }

  private:
    static std::string trim(const std::string& s) {
        size_t a = s.find_first_not_of(" \t");
        size_t b = s.find_last_not_of(" \t");
        return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
    }

    double to_double(const std::string& key, const std::string& value) const {
        if (value == "inf" || value == "+inf") return std::numeric_limits<double>::infinity();
        char* end = nullptr;
        const double v = std::strtod(value.c_str(), &end);
        if (end == value.c_str() || *end != '\0')
            throw InvalidConfig(origin_ + ": key '" + key + "': cannot parse number '" + value + "'");
        return v;
    }

    std::map<std::string, std::string> values_;
    std::string origin_ = "<config>";
};

}  // namespace sfsod
