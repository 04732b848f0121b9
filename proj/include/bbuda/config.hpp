#pragma once

#include <cstdint>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "bbuda/error.hpp"
#include "bbuda/util.hpp"

namespace bbuda {

// Flat key-value text with [section] headers. One dialect is shared by all
// subcommands, domain specs, and dataset manifests. Keys are addressed as
// "section.key"; keys before any section header have no prefix.
//
//   # comment
//   [train]
//   batch_size = 8
//
// Bare (non "key = value") lines inside a section are kept as ordered list
// items; dataset manifests use this for their sample-id listing.
class Config {
 public:
    Config() = default;

    static Config parse(const std::string& text, const std::string& origin = "<string>") {
        Config cfg;
        std::istringstream in(text);
        std::string line, section;
        int lineno = 0;
        while (std::getline(in, line)) {
            ++lineno;
            std::string s = strip(line);
            if (s.empty() || s[0] == '#') continue;
            if (s.front() == '[') {
                if (s.back() != ']')
                    throw config_error(origin + ":" + std::to_string(lineno) + ": malformed section header: " + s);
                section = strip(s.substr(1, s.size() - 2));
                if (section.empty())
                    throw config_error(origin + ":" + std::to_string(lineno) + ": empty section name");
                cfg.items_[section];  // record section even if empty
                continue;
            }
            auto eq = s.find('=');
            if (eq == std::string::npos) {
                cfg.items_[section].push_back(s);
                continue;
            }
            std::string key = strip(s.substr(0, eq));
            std::string val = strip(s.substr(eq + 1));
            if (key.empty())
                throw config_error(origin + ":" + std::to_string(lineno) + ": empty key");
            cfg.values_[qualify(section, key)] = val;
        }
        return cfg;
    }

    static Config parse_file(const std::string& path) { return parse(read_file_text(path), path); }

    // "--set section.key=value" override.
    void set(const std::string& assignment) {
        auto eq = assignment.find('=');
        if (eq == std::string::npos || eq == 0)
            throw config_error("override must look like key=value, got: " + assignment);
        values_[strip(assignment.substr(0, eq))] = strip(assignment.substr(eq + 1));
    }

    void set(const std::string& key, const std::string& value) { values_[key] = value; }

    bool has(const std::string& key) const { return values_.count(key) != 0; }

    std::string get_str(const std::string& key) const {
        auto it = values_.find(key);
        if (it == values_.end()) throw config_error("missing config key: " + key);
        return it->second;
    }
    std::string get_str(const std::string& key, const std::string& dflt) const {
        auto it = values_.find(key);
        return it == values_.end() ? dflt : it->second;
    }

    int64_t get_int(const std::string& key) const { return to_int(key, get_str(key)); }
    int64_t get_int(const std::string& key, int64_t dflt) const {
        return has(key) ? get_int(key) : dflt;
    }

    double get_double(const std::string& key) const { return to_double(key, get_str(key)); }
    double get_double(const std::string& key, double dflt) const {
        return has(key) ? get_double(key) : dflt;
    }

    bool get_bool(const std::string& key, bool dflt) const {
        if (!has(key)) return dflt;
        std::string v = get_str(key);
        if (v == "true" || v == "1" || v == "yes") return true;
        if (v == "false" || v == "0" || v == "no") return false;
        throw config_error("config key " + key + ": expected a boolean, got: " + v);
    }

    // Space-separated floats, e.g. "0.3 0.45 0.55 0.6".
    std::vector<double> get_vec(const std::string& key) const {
        std::istringstream in(get_str(key));
        std::vector<double> out;
        std::string tok;
        while (in >> tok) out.push_back(to_double(key, tok));
        if (out.empty()) throw config_error("config key " + key + ": empty vector value");
        return out;
    }
    std::vector<double> get_vec(const std::string& key, const std::vector<double>& dflt) const {
        return has(key) ? get_vec(key) : dflt;
    }

    const std::vector<std::string>& list_items(const std::string& section) const {
        static const std::vector<std::string> empty;
        auto it = items_.find(section);
        return it == items_.end() ? empty : it->second;
    }
    void add_item(const std::string& section, const std::string& item) { items_[section].push_back(item); }

    const std::map<std::string, std::string>& all_values() const { return values_; }

    // Re-emit as config text (sections grouped, keys sorted within each).
    std::string serialize() const {
        std::map<std::string, std::vector<std::pair<std::string, std::string>>> by_section;
        for (const auto& [k, v] : values_) {
            auto dot = k.find('.');
            if (dot == std::string::npos)
                by_section[""].emplace_back(k, v);
            else
                by_section[k.substr(0, dot)].emplace_back(k.substr(dot + 1), v);
        }
        for (const auto& [sec, _] : items_) by_section[sec];
        std::ostringstream out;
        bool first = true;
        for (const auto& [sec, kvs] : by_section) {
            if (!sec.empty()) {
                if (!first) out << "\n";
                out << "[" << sec << "]\n";
            }
            first = false;
            for (const auto& [k, v] : kvs) out << k << " = " << v << "\n";
            if (auto it = items_.find(sec); it != items_.end())
                for (const auto& item : it->second) out << item << "\n";
        }
        return out.str();
    }

 private:
    static std::string strip(const std::string& s) {
        size_t b = s.find_first_not_of(" \t\r\n");
        if (b == std::string::npos) return "";
        size_t e = s.find_last_not_of(" \t\r\n");
        return s.substr(b, e - b + 1);
    }
    static std::string qualify(const std::string& section, const std::string& key) {
        return section.empty() ? key : section + "." + key;
    }
    static int64_t to_int(const std::string& key, const std::string& v) {
        try {
            size_t pos = 0;
            int64_t r = std::stoll(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            throw config_error("config key " + key + ": expected an integer, got: " + v);
        }
    }
    static double to_double(const std::string& key, const std::string& v) {
        try {
            size_t pos = 0;
            double r = std::stod(v, &pos);
            if (pos != v.size()) throw std::invalid_argument(v);
            return r;
        } catch (const std::exception&) {
            throw config_error("config key " + key + ": expected a number, got: " + v);
        }
    }

    std::map<std::string, std::string> values_;
    std::map<std::string, std::vector<std::string>> items_;
};

}  // namespace bbuda
