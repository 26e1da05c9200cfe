#pragma once

#include <cctype>
#include <map>
#include <string>
#include <variant>
#include <vector>

#include "unlearn/errors.hpp"

namespace unlearn {

// Minimal TOML-compatible subset: [tables], key = value with string,
// integer, float, boolean, and flat array values. Comments with '#'.
struct TomlValue {
    std::variant<std::string, double, long long, bool, std::vector<TomlValue>> v;
    int line = 0;

    bool is_string() const { return std::holds_alternative<std::string>(v); }
    bool is_float() const { return std::holds_alternative<double>(v); }
    bool is_int() const { return std::holds_alternative<long long>(v); }
    bool is_bool() const { return std::holds_alternative<bool>(v); }
    bool is_array() const { return std::holds_alternative<std::vector<TomlValue>>(v); }

    double as_number() const {
        if (is_float()) return std::get<double>(v);
        if (is_int()) return static_cast<double>(std::get<long long>(v));
        throw ConfigError("line " + std::to_string(line) + ": expected a number");
    }
    const std::string& as_string() const {
        if (!is_string())
            throw ConfigError("line " + std::to_string(line) + ": expected a string");
        return std::get<std::string>(v);
    }
    bool as_bool() const {
        if (!is_bool())
            throw ConfigError("line " + std::to_string(line) + ": expected a boolean");
        return std::get<bool>(v);
    }
    const std::vector<TomlValue>& as_array() const {
        if (!is_array())
            throw ConfigError("line " + std::to_string(line) + ": expected an array");
        return std::get<std::vector<TomlValue>>(v);
    }
};

// Dotted-key map: "section.key" -> value.
using TomlTable = std::map<std::string, TomlValue>;

namespace detail_toml {

inline std::string strip(const std::string& s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
    return s.substr(b, e - b);
}

// Removes a trailing comment that is not inside a string literal.
inline std::string strip_comment(const std::string& s) {
    bool in_string = false;
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (s[i] == '"') in_string = !in_string;
        if (s[i] == '#' && !in_string) return s.substr(0, i);
    }
    return s;
}

inline TomlValue parse_scalar(const std::string& raw, int line);

inline TomlValue parse_value(const std::string& raw, int line) {
    std::string t = strip(raw);
    if (t.empty()) throw ConfigError("line " + std::to_string(line) + ": missing value");
    if (t.front() == '[') {
        if (t.back() != ']')
            throw ConfigError("line " + std::to_string(line) + ": unterminated array");
        std::vector<TomlValue> items;
        std::string body = t.substr(1, t.size() - 2);
        std::string cur;
        bool in_string = false;
        for (char c : body) {
            if (c == '"') in_string = !in_string;
            if (c == ',' && !in_string) {
                if (!strip(cur).empty()) items.push_back(parse_scalar(strip(cur), line));
                cur.clear();
            } else {
                cur += c;
            }
        }
        if (!strip(cur).empty()) items.push_back(parse_scalar(strip(cur), line));
        TomlValue v;
        v.v = std::move(items);
        v.line = line;
        return v;
    }
    return parse_scalar(t, line);
}

inline TomlValue parse_scalar(const std::string& t, int line) {
    TomlValue v;
    v.line = line;
    if (t.size() >= 2 && t.front() == '"' && t.back() == '"') {
        v.v = t.substr(1, t.size() - 2);
        return v;
    }
    if (t == "true" || t == "false") {
        v.v = (t == "true");
        return v;
    }
    // Integer first; fall back to float.
    try {
        std::size_t pos = 0;
        if (t.find_first_of(".eE") == std::string::npos) {
            long long i = std::stoll(t, &pos);
            if (pos == t.size()) {
                v.v = i;
                return v;
            }
        } else {
            double d = std::stod(t, &pos);
            if (pos == t.size()) {
                v.v = d;
                return v;
            }
        }
    } catch (const std::exception&) {
        // fall through to the error below
    }
    throw ConfigError("line " + std::to_string(line) + ": cannot parse value '" + t + "'");
}

}  // namespace detail_toml

inline TomlTable parse_toml(const std::string& text) {
    TomlTable out;
    std::string section;
    int line_no = 0;
    std::size_t pos = 0;
    while (pos <= text.size()) {
        const std::size_t nl = text.find('\n', pos);
        std::string line = text.substr(pos, nl == std::string::npos ? std::string::npos
                                                                    : nl - pos);
        pos = nl == std::string::npos ? text.size() + 1 : nl + 1;
        ++line_no;
        line = detail_toml::strip(detail_toml::strip_comment(line));
        if (line.empty()) continue;
        if (line.front() == '[') {
            if (line.back() != ']')
                throw ConfigError("line " + std::to_string(line_no) + ": malformed table header");
            section = detail_toml::strip(line.substr(1, line.size() - 2));
            if (section.empty())
                throw ConfigError("line " + std::to_string(line_no) + ": empty table name");
            continue;
        }
        const std::size_t eq = line.find('=');
        if (eq == std::string::npos)
            throw ConfigError("line " + std::to_string(line_no) + ": expected key = value");
        std::string key = detail_toml::strip(line.substr(0, eq));
        if (key.empty())
            throw ConfigError("line " + std::to_string(line_no) + ": empty key");
        const std::string full = section.empty() ? key : section + "." + key;
        if (out.count(full))
            throw ConfigError("line " + std::to_string(line_no) + ": duplicate key '" + full +
                              "'");
        out[full] = detail_toml::parse_value(line.substr(eq + 1), line_no);
    }
    return out;
}

}  // namespace unlearn
