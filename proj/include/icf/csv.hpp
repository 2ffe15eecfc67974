#pragma once

// Minimal comma-separated reading and writing shared by the file formats.

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <istream>
#include <string>
#include <string_view>
#include <vector>

#include "icf/core.hpp"

namespace icf::csv {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        out.emplace_back(trim(line.substr(start, pos == std::string_view::npos ? pos : pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

/// Parses a double; "nan" is accepted. Throws ParseError naming `what`.
inline double parse_double(std::string_view s, std::size_t line, const char* what) {
    s = trim(s);
    if (s == "nan" || s == "NaN") return std::nan("");
    double v = 0.0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ParseError(std::string("cannot parse ") + what + " '" + std::string(s) + "'", line);
    return v;
}

inline long parse_int(std::string_view s, std::size_t line, const char* what) {
    s = trim(s);
    long v = 0;
    const auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
        throw ParseError(std::string("cannot parse ") + what + " '" + std::string(s) + "'", line);
    return v;
}

/// One data row together with its 1-based line number.
struct Row {
    std::size_t line = 0;
    std::vector<std::string> cells;
};

/// Reads a table with a header line. Blank lines and lines starting with '#'
/// are skipped. Returns the header cells and the rows.
inline std::pair<std::vector<std::string>, std::vector<Row>> read_table(std::istream& in) {
    std::vector<std::string> header;
    std::vector<Row> rows;
    std::string raw;
    std::size_t line = 0;
    while (std::getline(in, raw)) {
        ++line;
        if (line == 1 && raw.size() >= 3 && raw.compare(0, 3, "\xEF\xBB\xBF") == 0) raw.erase(0, 3);
        const std::string_view t = trim(raw);
        if (t.empty() || t.front() == '#') continue;
        if (header.empty()) {
            header = split(t);
            continue;
        }
        rows.push_back({line, split(t)});
    }
    if (header.empty()) throw ParseError("missing header line", 0);
    return {std::move(header), std::move(rows)};
}

inline std::ifstream open_input(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw InvalidInput("cannot open '" + path + "'");
    return in;
}

inline std::ofstream open_output(const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InvalidInput("cannot write '" + path + "'");
    return out;
}

/// Shortest round-trippable text for a double.
inline std::string fmt(double v) {
    if (std::isnan(v)) return "nan";
    char buf[32];
    const auto [p, ec] = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, p);
}

/// Fixed-precision text for reports.
inline std::string fmt(double v, int digits) {
    if (std::isnan(v)) return "nan";
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*g", digits, v);
    return buf;
}

}  // namespace icf::csv
