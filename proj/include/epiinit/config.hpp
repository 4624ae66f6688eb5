#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "epiinit/types.hpp"

namespace epiinit {

/**
 * Flat `key = value` configuration with `#` comments. The same format is used
 * for run manifests, so a manifest can be fed straight back as a config file.
 */
struct KeyValueConfig {
    std::map<std::string, std::string> values;

    static std::string trim(const std::string& s) {
        const auto begin = s.find_first_not_of(" \t");
        if (begin == std::string::npos) return "";
        const auto end = s.find_last_not_of(" \t");
        return s.substr(begin, end - begin + 1);
    }

    static KeyValueConfig parse(std::istream& in) {
        KeyValueConfig cfg;
        std::string line;
        size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (!line.empty() && line.back() == '\r') line.pop_back();
            const auto hash = line.find('#');
            if (hash != std::string::npos) line.erase(hash);
            const std::string text = trim(line);
            if (text.empty()) continue;
            const auto eq = text.find('=');
            if (eq == std::string::npos)
                throw DataFormatError("config line " + std::to_string(line_no) +
                                      ": expected 'key = value'");
            const std::string key = trim(text.substr(0, eq));
            const std::string value = trim(text.substr(eq + 1));
            if (key.empty())
                throw DataFormatError("config line " + std::to_string(line_no) + ": empty key");
            cfg.values[key] = value;
        }
        return cfg;
    }

    static KeyValueConfig parse_file(const std::string& path) {
        std::ifstream in(path);
        if (!in) throw DataFormatError("cannot open config file '" + path + "'");
        return parse(in);
    }

    bool has(const std::string& key) const { return values.count(key) > 0; }

    const std::string& get(const std::string& key) const { return values.at(key); }
};

/// Ordered manifest writer; keys are emitted in the order given.
inline void write_key_values(std::ostream& out,
                             const std::vector<std::pair<std::string, std::string>>& entries) {
    for (const auto& [key, value] : entries) out << key << " = " << value << "\n";
}

}  // namespace epiinit
