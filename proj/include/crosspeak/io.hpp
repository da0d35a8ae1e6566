#pragma once

// Small file helpers shared by the CLI: numeric CSV tables, fixed-precision
// formatting and write-to-temp-then-rename output.

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "crosspeak/errors.hpp"

namespace crosspeak::io {

/// printf-style fixed notation; "-0.000" is normalized to "0.000".
[[nodiscard]] inline std::string fixed(double v, int decimals) {
    if (!std::isfinite(v)) return std::isnan(v) ? "nan" : (v > 0 ? "inf" : "-inf");
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.*f", decimals, v);
    std::string s(buf);
    if (s[0] == '-' && s.find_first_not_of("-0.") == std::string::npos) s.erase(0, 1);
    return s;
}

[[nodiscard]] inline std::string gauss(double v) { return fixed(v, 6); }
[[nodiscard]] inline std::string mhz(double v) { return fixed(v, 4); }

inline std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r\n");
    return s.substr(b, e - b + 1);
}

inline std::vector<std::string> split(const std::string& line, char sep = ',') {
    std::vector<std::string> out;
    std::string cell;
    std::istringstream in(line);
    while (std::getline(in, cell, sep)) out.push_back(trim(cell));
    if (!line.empty() && line.back() == sep) out.emplace_back();
    return out;
}

/// CSV with a header row; blank lines and lines starting with '#' are skipped.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    [[nodiscard]] std::size_t index(const std::string& name) const {
        for (std::size_t k = 0; k < header.size(); ++k)
            if (header[k] == name) return k;
        throw ConfigError("CSV is missing column '" + name + "'");
    }

    [[nodiscard]] bool has(const std::string& name) const {
        for (const auto& h : header)
            if (h == name) return true;
        return false;
    }

    [[nodiscard]] std::vector<double> numeric(std::size_t col) const {
        std::vector<double> out;
        out.reserve(rows.size());
        for (std::size_t r = 0; r < rows.size(); ++r) {
            if (col >= rows[r].size())
                throw ConfigError("CSV row " + std::to_string(r + 2) + " has too few columns");
            const std::string& cell = rows[r][col];
            char* end = nullptr;
            errno = 0;
            const double v = std::strtod(cell.c_str(), &end);
            if (cell.empty() || end != cell.c_str() + cell.size() || errno == ERANGE || !std::isfinite(v))
                throw ConfigError("CSV row " + std::to_string(r + 2) + ": '" + cell + "' is not a finite number");
            out.push_back(v);
        }
        return out;
    }

    [[nodiscard]] std::vector<double> numeric(const std::string& name) const { return numeric(index(name)); }
};

[[nodiscard]] inline CsvTable parse_csv(std::istream& in) {
    CsvTable t;
    std::string line;
    while (std::getline(in, line)) {
        const std::string s = trim(line);
        if (s.empty() || s[0] == '#') continue;
        if (t.header.empty()) t.header = split(s);
        else t.rows.push_back(split(s));
    }
    if (t.header.empty()) throw ConfigError("CSV input is empty");
    return t;
}

[[nodiscard]] inline CsvTable read_csv(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("cannot open '" + path.string() + "'");
    return parse_csv(in);
}

/// Write `content` to a sibling temp file, then rename over `path`.
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
    const auto dir = path.has_parent_path() ? path.parent_path() : std::filesystem::path(".");
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    const auto tmp = dir / ("." + path.filename().string() + ".tmp" + std::to_string(::getpid()));
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw ConfigError("cannot write '" + tmp.string() + "'");
        out << content;
        out.flush();
        if (!out) {
            std::filesystem::remove(tmp, ec);
            throw ConfigError("write failed for '" + path.string() + "'");
        }
    }
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        std::filesystem::remove(tmp, ec);
        throw ConfigError("cannot rename output onto '" + path.string() + "'");
    }
}

/// Several outputs written together: everything is rendered first, then each file
/// is renamed into place, so a rendering failure leaves no partial output.
class OutputSet {
public:
    void add(std::filesystem::path path, std::string content) {
        files_.emplace_back(std::move(path), std::move(content));
    }
    void commit() const {
        for (const auto& [p, c] : files_) write_atomic(p, c);
    }
    [[nodiscard]] std::size_t size() const { return files_.size(); }

private:
    std::vector<std::pair<std::filesystem::path, std::string>> files_;
};

}  // namespace crosspeak::io
