#pragma once

#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "unlearn/errors.hpp"

namespace unlearn {

// Shortest round-trippable decimal form; identical input bits give
// identical text, which is what the byte-determinism contract needs.
inline std::string format_double(double v) {
    char buf[32];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

// Fixed-column CSV writer. Columns are set once; every row must match.
class CsvWriter {
public:
    CsvWriter(const std::string& path, std::vector<std::string> columns)
        : columns_(std::move(columns)), out_(path, std::ios::binary) {
        if (!out_) throw FormatError("CsvWriter: cannot open " + path);
        for (std::size_t i = 0; i < columns_.size(); ++i) {
            if (i) out_ << ',';
            out_ << columns_[i];
        }
        out_ << '\n';
    }

    void row(const std::vector<double>& values) {
        if (values.size() != columns_.size()) {
            throw ContractViolation("CsvWriter: row width mismatch");
        }
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (i) out_ << ',';
            out_ << format_double(values[i]);
        }
        out_ << '\n';
    }

    void row_strings(const std::vector<std::string>& values) {
        if (values.size() != columns_.size()) {
            throw ContractViolation("CsvWriter: row width mismatch");
        }
        for (std::size_t i = 0; i < values.size(); ++i) {
            if (i) out_ << ',';
            out_ << values[i];
        }
        out_ << '\n';
    }

private:
    std::vector<std::string> columns_;
    std::ofstream out_;
};

}  // namespace unlearn
