#pragma once

#include <fstream>
#include <map>
#include <string>

#include "aima/common.hpp"

namespace aima {

/// Flat key=value config file: one pair per line, '#' comments, blank lines
/// ignored. Environment variables are never consulted. The committed
/// configs/default.cfg documents every key.
class Config {
public:
    static Config load(const std::string& path) {
        std::ifstream f(path);
        require(bool(f), ErrorClass::io, "cannot open config: " + path);
        Config c;
        std::string line;
        int lineno = 0;
        while (std::getline(f, line)) {
            ++lineno;
            std::string s = strip(line);
            if (s.empty() || s[0] == '#') continue;
            auto eq = s.find('=');
            require(eq != std::string::npos, ErrorClass::config,
                    "config line " + std::to_string(lineno) + " is not key=value: " + s);
            std::string key = strip(s.substr(0, eq));
            std::string value = strip(s.substr(eq + 1));
            require(!key.empty(), ErrorClass::config,
                    "empty key at config line " + std::to_string(lineno));
            c.values_[key] = value;
        }
        return c;
    }

    bool has(const std::string& key) const { return values_.count(key) > 0; }

    std::string get_string(const std::string& key, const std::string& fallback) const {
        auto it = values_.find(key);
        return it == values_.end() ? fallback : it->second;
    }

    long get_int(const std::string& key, long fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t pos = 0;
            long v = std::stol(it->second, &pos);
            require(pos == it->second.size(), ErrorClass::config, "");
            return v;
        } catch (...) {
            fail_config("config key '" + key + "' is not an integer: " + it->second);
        }
    }

    double get_double(const std::string& key, double fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        try {
            std::size_t pos = 0;
            double v = std::stod(it->second, &pos);
            require(pos == it->second.size(), ErrorClass::config, "");
            return v;
        } catch (...) {
            fail_config("config key '" + key + "' is not a number: " + it->second);
        }
    }

    bool get_bool(const std::string& key, bool fallback) const {
        auto it = values_.find(key);
        if (it == values_.end()) return fallback;
        if (it->second == "true" || it->second == "1") return true;
        if (it->second == "false" || it->second == "0") return false;
        fail_config("config key '" + key + "' is not a boolean: " + it->second);
    }

    const std::map<std::string, std::string>& values() const { return values_; }

private:
    static std::string strip(const std::string& s) {
        std::size_t b = s.find_first_not_of(" \t\r");
        if (b == std::string::npos) return "";
        std::size_t e = s.find_last_not_of(" \t\r");
        return s.substr(b, e - b + 1);
    }

    std::map<std::string, std::string> values_;
};

}  // namespace aima
