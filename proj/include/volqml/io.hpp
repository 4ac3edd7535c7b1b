#pragma once

#include "volqml/errors.hpp"
#include "volqml/mc_experiments.hpp"

#include <cerrno>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

namespace volqml {

inline constexpr std::string_view kVersion = "0.1.0";
inline constexpr std::string_view kSchemaLine = "# volqml-schema v1";

/// 64-bit FNV-1a, used to fingerprint the effective run configuration.
inline std::uint64_t fnv1a64(std::string_view s) {
    std::uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : s) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof buf, "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

struct Provenance {
    std::string config_hash;
    std::uint64_t seed = 0;

    [[nodiscard]] std::string comment() const {
        return "# volqml " + std::string(kVersion) + " config=" + config_hash + " seed=" + std::to_string(seed);
    }
};

/// %.17g, which round-trips every double.
inline std::string format_real(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

/// Writes header comments, a column header and rows. LF line endings.
inline void write_csv(const std::filesystem::path& path, const Provenance& prov, const std::vector<std::string>& columns,
                      const std::vector<std::vector<double>>& rows) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
    std::string buf;
    buf += kSchemaLine;
    buf += '\n';
    buf += prov.comment();
    buf += '\n';
    for (std::size_t c = 0; c < columns.size(); ++c) {
        if (c) buf += ',';
        buf += columns[c];
    }
    buf += '\n';
    for (const auto& row : rows) {
        for (std::size_t c = 0; c < row.size(); ++c) {
            if (c) buf += ',';
            buf += format_real(row[c]);
        }
        buf += '\n';
    }
    out << buf;
    if (!out) throw InputError("write to '" + path.string() + "' failed");
}

inline void write_table(const std::filesystem::path& path, const Provenance& prov, const Table& t) {
    write_csv(path, prov, t.columns, t.rows);
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw InputError("write to '" + path.string() + "' failed");
}

namespace detail {

inline std::vector<std::string> split_commas(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    for (;;) {
        const auto pos = line.find(',', start);
        std::string cell(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        while (!cell.empty() && (cell.back() == ' ' || cell.back() == '\t')) cell.pop_back();
        std::size_t lead = 0;
        while (lead < cell.size() && (cell[lead] == ' ' || cell[lead] == '\t')) ++lead;
        out.push_back(cell.substr(lead));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

inline double parse_real(const std::string& cell, const std::string& file, std::size_t line_no) {
    if (cell.empty()) throw InputError(file + ":" + std::to_string(line_no) + ": empty cell");
    errno = 0;
    char* end = nullptr;
    const double v = std::strtod(cell.c_str(), &end);
    if (end != cell.c_str() + cell.size() || errno == ERANGE)
        throw InputError(file + ":" + std::to_string(line_no) + ": '" + cell + "' is not a number");
    return v;
}

}  // namespace detail

/**
 * Reads a numeric CSV: '#' lines and blank lines are skipped, the first
 * remaining line is the header. Errors carry the 1-based line number.
 */
inline Table read_table(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InputError("cannot open '" + path.string() + "'");
    const std::string file = path.string();
    Table t;
    std::string line;
    std::size_t line_no = 0;
    bool have_header = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        auto cells = detail::split_commas(line);
        if (!have_header) {
            for (const auto& c : cells)
                if (c.empty()) throw InputError(file + ":" + std::to_string(line_no) + ": empty column name");
            t.columns = std::move(cells);
            have_header = true;
            continue;
        }
        if (cells.size() != t.columns.size())
            throw InputError(file + ":" + std::to_string(line_no) + ": expected " + std::to_string(t.columns.size()) +
                             " fields, found " + std::to_string(cells.size()));
        std::vector<double> row;
        row.reserve(cells.size());
        for (const auto& c : cells) row.push_back(detail::parse_real(c, file, line_no));
        t.rows.push_back(std::move(row));
    }
    if (!have_header) throw InputError(file + ": no header line");
    return t;
}

/// Column `column` of an observation CSV; values must be finite.
inline std::vector<double> read_observations(const std::filesystem::path& path, const std::string& column = "X") {
    const Table t = read_table(path);
    std::size_t c = 0;
    try {
        c = t.column(column);
    } catch (const ConstraintError&) {
        throw InputError(path.string() + ": no column '" + column + "'");
    }
    std::vector<double> out;
    out.reserve(t.rows.size());
    for (const auto& row : t.rows) {
        if (!std::isfinite(row[c]))
            throw InputError(path.string() + ": row " + std::to_string(out.size() + 1) + " of column '" + column +
                             "' is not finite");
        out.push_back(row[c]);
    }
    return out;
}

/**
 * Checks that the d2h.<a>.<b> columns of a filter CSV are symmetric in (a, b).
 * Returns the largest absolute asymmetry; throws InputError above `tol`.
 */
inline double verify_d2h_symmetry(const Table& t, const std::vector<std::string>& names, double tol = 0.0) {
    double worst = 0.0;
    for (std::size_t a = 0; a < names.size(); ++a)
        for (std::size_t b = a + 1; b < names.size(); ++b) {
            const std::size_t ab = t.column("d2h." + names[a] + "." + names[b]);
            const std::size_t ba = t.column("d2h." + names[b] + "." + names[a]);
            for (const auto& row : t.rows) worst = std::max(worst, std::abs(row[ab] - row[ba]));
        }
    if (worst > tol) throw InputError("d2h columns are not symmetric (max gap " + format_real(worst) + ")");
    return worst;
}

}  // namespace volqml
