#pragma once

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "cdnas/rng.hpp"
#include "cdnas/tensor.hpp"

namespace cdnas {

// Flat key=value configuration with [section] headers (a key inside
// [train] is addressed as "train.key"). Every key must appear in the schema
// with a type; anything else is an error, so typos never pass silently.

enum class ConfigType { integer, real, boolean, text };

struct ConfigField {
    std::string key;
    ConfigType type = ConfigType::text;
    std::string default_value;
    std::string help;
};

struct ConfigSchema {
    std::vector<ConfigField> fields;

    const ConfigField* find(const std::string& key) const {
        for (const ConfigField& f : fields)
            if (f.key == key) return &f;
        return nullptr;
    }
    void add(const std::string& key, ConfigType type, const std::string& default_value,
             const std::string& help) {
        require(find(key) == nullptr, "config schema: duplicate key " + key);
        fields.push_back({key, type, default_value, help});
    }
};

namespace config_detail {

inline std::string trim(const std::string& s) {
    const auto f = s.find_first_not_of(" \t\r\n");
    if (f == std::string::npos) return {};
    const auto l = s.find_last_not_of(" \t\r\n");
    return s.substr(f, l - f + 1);
}

inline void check_type(const std::string& key, ConfigType type, const std::string& value) {
    const std::string where = "config: key " + key + " = \"" + value + "\"";
    switch (type) {
        case ConfigType::integer: {
            size_t used = 0;
            try {
                (void)std::stoll(value, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            require(used == value.size() && !value.empty(), where + " is not an integer");
            break;
        }
        case ConfigType::real: {
            size_t used = 0;
            try {
                (void)std::stod(value, &used);
            } catch (const std::exception&) {
                used = 0;
            }
            require(used == value.size() && !value.empty(), where + " is not a number");
            break;
        }
        case ConfigType::boolean:
            require(value == "true" || value == "false" || value == "0" || value == "1" ||
                        value == "yes" || value == "no",
                    where + " is not a boolean");
            break;
        case ConfigType::text: break;
    }
}

}  // namespace config_detail

struct Config {
    std::map<std::string, std::string> values;

    bool has(const std::string& key) const { return values.count(key) != 0; }
    const std::string& get_text(const std::string& key) const {
        const auto it = values.find(key);
        require(it != values.end(), "config: unset key " + key);
        return it->second;
    }
    int64_t get_int(const std::string& key) const { return std::stoll(get_text(key)); }
    double get_real(const std::string& key) const { return std::stod(get_text(key)); }
    bool get_bool(const std::string& key) const {
        const std::string& v = get_text(key);
        return v == "true" || v == "1" || v == "yes";
    }

    // Canonical form: sorted key=value lines. Its hash identifies a run setup.
    std::string canonical() const {
        std::string out;
        for (const auto& [k, v] : values) out += k + "=" + v + "\n";
        return out;
    }
    uint64_t hash() const { return fnv1a(canonical()); }
};

// Parses config text, applies `overrides` ("key=value" pairs, e.g. from the
// command line) on top, fills schema defaults for everything still unset.
inline Config parse_config(const ConfigSchema& schema, const std::string& text,
                           const std::vector<std::string>& overrides = {}) {
    Config cfg;
    std::string section;
    std::istringstream in(text);
    std::string raw;
    int line_no = 0;
    while (std::getline(in, raw)) {
        ++line_no;
        std::string line = raw;
        const auto comment = line.find_first_of("#;");
        if (comment != std::string::npos) line = line.substr(0, comment);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        if (line.front() == '[') {
            require(line.back() == ']', "config line " + std::to_string(line_no) +
                                            ": unterminated section header");
            section = config_detail::trim(line.substr(1, line.size() - 2));
            continue;
        }
        const auto eq = line.find('=');
        require(eq != std::string::npos,
                "config line " + std::to_string(line_no) + ": expected key=value");
        std::string key = config_detail::trim(line.substr(0, eq));
        const std::string value = config_detail::trim(line.substr(eq + 1));
        require(!key.empty(), "config line " + std::to_string(line_no) + ": empty key");
        if (!section.empty()) key = section + "." + key;
        const ConfigField* field = schema.find(key);
        require(field != nullptr,
                "config line " + std::to_string(line_no) + ": unknown key " + key);
        config_detail::check_type(key, field->type, value);
        cfg.values[key] = value;  // later assignment wins
    }
    for (const std::string& ov : overrides) {
        const auto eq = ov.find('=');
        require(eq != std::string::npos, "config override \"" + ov + "\": expected key=value");
        const std::string key = config_detail::trim(ov.substr(0, eq));
        const std::string value = config_detail::trim(ov.substr(eq + 1));
        const ConfigField* field = schema.find(key);
        require(field != nullptr, "config override: unknown key " + key);
        config_detail::check_type(key, field->type, value);
        cfg.values[key] = value;
    }
    for (const ConfigField& f : schema.fields)
        if (!cfg.values.count(f.key) && !f.default_value.empty()) {
            config_detail::check_type(f.key, f.type, f.default_value);
            cfg.values[f.key] = f.default_value;
        }
    return cfg;
}

inline Config load_config(const ConfigSchema& schema, const std::string& path,
                          const std::vector<std::string>& overrides = {}) {
    std::ifstream in(path);
    require(in.good(), "config: cannot open " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return parse_config(schema, buf.str(), overrides);
}

}  // namespace cdnas
