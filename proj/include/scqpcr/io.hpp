#ifndef SCQPCR_IO_HPP
#define SCQPCR_IO_HPP

#include <charconv>
#include <cmath>
#include <cstddef>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <system_error>
#include <unordered_map>
#include <vector>

#include "core.hpp"
#include "error.hpp"

/**
 * @file io.hpp
 *
 * @brief Plate CSV ingestion and emission, and TSV report helpers.
 *
 * Two plate layouts are accepted:
 *
 * - long: header `well_id,unit_id,group,n_cells,gene,ct` (any column order),
 *   one row per well × gene;
 * - wide: header `well_id,unit_id,group,n_cells,<gene>...`, one row per well.
 *
 * An empty `ct` field or the literal `N/A` marks an undetected reaction.
 * Emitted plates use the long layout with the shortest round-trip
 * representation of each `ct`, so ingesting and re-emitting a canonical file
 * reproduces it byte for byte.
 */

namespace scqpcr {

enum class PlateFormat {
    long_format,
    wide_format
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) {
        s.remove_prefix(1);
    }
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) {
        s.remove_suffix(1);
    }
    return s;
}

inline std::vector<std::string> split_csv(std::string_view line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto comma = line.find(',', start);
        out.emplace_back(trim(line.substr(start, comma == std::string_view::npos ? std::string_view::npos : comma - start)));
        if (comma == std::string_view::npos) {
            break;
        }
        start = comma + 1;
    }
    return out;
}

inline std::string at_line(std::size_t line) {
    return "line " + std::to_string(line) + ": ";
}

inline std::optional<double> parse_ct(const std::string& field, std::size_t line) {
    if (field.empty() || field == "N/A") {
        return std::nullopt;
    }
    double value = 0;
    const auto* end = field.data() + field.size();
    const auto res = std::from_chars(field.data(), end, value);
    if (res.ec != std::errc() || res.ptr != end || !std::isfinite(value)) {
        throw MalformedInput(at_line(line) + "non-numeric ct value '" + field + "'");
    }
    return value;
}

inline int parse_cells(const std::string& field, std::size_t line) {
    int value = 0;
    const auto* end = field.data() + field.size();
    const auto res = std::from_chars(field.data(), end, value);
    if (res.ec != std::errc() || res.ptr != end || value < 1) {
        throw MalformedInput(at_line(line) + "n_cells must be a positive integer, got '" + field + "'");
    }
    return value;
}

inline void check_ct(const std::optional<double>& ct, int c_max, std::size_t line, const std::string& well, const std::string& gene) {
    if (ct && !(*ct > 0 && *ct <= c_max)) {
        throw MalformedInput(at_line(line) + "ct " + std::to_string(*ct) + " for well '" + well + "', gene '" + gene + "' is outside (0, " + std::to_string(c_max) + "]");
    }
}

inline std::vector<std::pair<std::size_t, std::string> > read_lines(std::istream& in) {
    std::vector<std::pair<std::size_t, std::string> > out;
    std::string line;
    std::size_t number = 0;
    while (std::getline(in, line)) {
        ++number;
        if (!trim(line).empty()) {
            out.emplace_back(number, line);
        }
    }
    return out;
}

inline PlateMatrix assemble(std::vector<WellMeta> wells, std::vector<std::string> genes, Grid<std::optional<double> > ct, int c_max) {
    PlateMatrix plate;
    plate.wells = std::move(wells);
    plate.genes = std::move(genes);
    plate.ct = std::move(ct);
    plate.c_max = c_max;
    plate.validate();
    return plate;
}

inline PlateMatrix read_long(const std::vector<std::pair<std::size_t, std::string> >& lines, int c_max) {
    const auto header = split_csv(lines.front().second);
    const char* required[] = { "well_id", "unit_id", "group", "n_cells", "gene", "ct" };
    std::size_t col[6];
    for (std::size_t r = 0; r < 6; ++r) {
        std::size_t c = 0;
        while (c < header.size() && header[c] != required[r]) {
            ++c;
        }
        if (c == header.size()) {
            throw MalformedInput(at_line(lines.front().first) + "missing column '" + std::string(required[r]) + "'");
        }
        col[r] = c;
    }

    std::vector<WellMeta> wells;
    std::vector<std::size_t> well_line;
    std::vector<std::string> genes;
    std::unordered_map<std::string, std::size_t> well_index, gene_index;
    struct Entry { std::size_t well, gene, line; std::optional<double> ct; };
    std::vector<Entry> entries;

    for (std::size_t l = 1; l < lines.size(); ++l) {
        const auto& [number, text] = lines[l];
        const auto fields = split_csv(text);
        if (fields.size() != header.size()) {
            throw MalformedInput(at_line(number) + "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
        }
        WellMeta meta{ fields[col[0]], fields[col[1]], fields[col[2]], parse_cells(fields[col[3]], number) };
        if (meta.well_id.empty() || fields[col[4]].empty()) {
            throw MalformedInput(at_line(number) + "empty well or gene identifier");
        }
        auto [wit, wnew] = well_index.try_emplace(meta.well_id, wells.size());
        if (wnew) {
            wells.push_back(meta);
            well_line.push_back(number);
        } else if (!(wells[wit->second] == meta)) {
            throw MalformedInput(at_line(number) + "metadata for well '" + meta.well_id + "' disagrees with line " + std::to_string(well_line[wit->second]));
        }
        auto [git, gnew] = gene_index.try_emplace(fields[col[4]], genes.size());
        if (gnew) {
            genes.push_back(fields[col[4]]);
        }
        auto ct = parse_ct(fields[col[5]], number);
        check_ct(ct, c_max, number, meta.well_id, fields[col[4]]);
        entries.push_back(Entry{ wit->second, git->second, number, ct });
    }

    Grid<std::optional<double> > ct(wells.size(), genes.size());
    Grid<std::size_t> seen(wells.size(), genes.size(), 0);
    for (const auto& e : entries) {
        if (seen(e.well, e.gene)) {
            throw MalformedInput(at_line(e.line) + "duplicate entry for well '" + wells[e.well].well_id + "', gene '" + genes[e.gene] +
                "' (first at line " + std::to_string(seen(e.well, e.gene)) + ")");
        }
        seen(e.well, e.gene) = e.line;
        ct(e.well, e.gene) = e.ct;
    }
    for (std::size_t i = 0; i < wells.size(); ++i) {
        for (std::size_t j = 0; j < genes.size(); ++j) {
            if (!seen(i, j)) {
                throw MalformedInput("no ct entry for well '" + wells[i].well_id + "', gene '" + genes[j] + "'");
            }
        }
    }
    return assemble(std::move(wells), std::move(genes), std::move(ct), c_max);
}

inline PlateMatrix read_wide(const std::vector<std::pair<std::size_t, std::string> >& lines, int c_max) {
    const auto header = split_csv(lines.front().second);
    const char* required[] = { "well_id", "unit_id", "group", "n_cells" };
    if (header.size() < 4) {
        throw MalformedInput(at_line(lines.front().first) + "wide header needs well_id,unit_id,group,n_cells followed by gene columns");
    }
    for (std::size_t r = 0; r < 4; ++r) {
        if (header[r] != required[r]) {
            throw MalformedInput(at_line(lines.front().first) + "column " + std::to_string(r + 1) + " must be '" + required[r] + "'");
        }
    }
    std::vector<std::string> genes(header.begin() + 4, header.end());
    std::vector<WellMeta> wells;
    std::vector<std::optional<double> > values;
    std::unordered_map<std::string, std::size_t> well_line;
    for (std::size_t l = 1; l < lines.size(); ++l) {
        const auto& [number, text] = lines[l];
        const auto fields = split_csv(text);
        if (fields.size() != header.size()) {
            throw MalformedInput(at_line(number) + "expected " + std::to_string(header.size()) + " fields, found " + std::to_string(fields.size()));
        }
        if (const auto [it, fresh] = well_line.try_emplace(fields[0], number); !fresh) {
            throw MalformedInput(at_line(number) + "duplicate well '" + fields[0] + "' (first at line " + std::to_string(it->second) + ")");
        }
        wells.push_back(WellMeta{ fields[0], fields[1], fields[2], parse_cells(fields[3], number) });
        for (std::size_t j = 0; j < genes.size(); ++j) {
            auto ct = parse_ct(fields[4 + j], number);
            check_ct(ct, c_max, number, fields[0], genes[j]);
            values.push_back(ct);
        }
    }
    Grid<std::optional<double> > ct;
    ct.rows = wells.size();
    ct.cols = genes.size();
    ct.data = std::move(values);
    return assemble(std::move(wells), std::move(genes), std::move(ct), c_max);
}

}

/**
 * @brief Parse a plate from CSV text.
 *
 * @throws MalformedInput on empty input, missing columns, duplicate
 * (well, gene) entries, non-numeric or out-of-range `ct`; messages carry the
 * line number where applicable.
 */
inline PlateMatrix ingest(std::istream& in, PlateFormat format = PlateFormat::long_format, int c_max = default_c_max) {
    const auto lines = detail::read_lines(in);
    if (lines.empty()) {
        throw MalformedInput("empty input");
    }
    if (lines.size() == 1) {
        throw MalformedInput("input has a header but no data rows");
    }
    return format == PlateFormat::long_format ? detail::read_long(lines, c_max) : detail::read_wide(lines, c_max);
}

inline PlateMatrix ingest_file(const std::filesystem::path& path, PlateFormat format = PlateFormat::long_format, int c_max = default_c_max) {
    std::ifstream in(path);
    if (!in) {
        throw IoError("cannot open '" + path.string() + "'");
    }
    return ingest(in, format, c_max);
}

/** Shortest representation that parses back to the same double. */
inline std::string format_roundtrip(double value) {
    char buffer[64];
    const auto res = std::to_chars(buffer, buffer + sizeof(buffer), value);
    return std::string(buffer, res.ptr);
}

inline std::string format_ct(const std::optional<double>& ct) {
    return ct ? format_roundtrip(*ct) : std::string("N/A");
}

inline void emit(std::ostream& out, const PlateMatrix& plate, PlateFormat format = PlateFormat::long_format) {
    if (format == PlateFormat::long_format) {
        out << "well_id,unit_id,group,n_cells,gene,ct\n";
        for (std::size_t i = 0; i < plate.wells.size(); ++i) {
            const auto& w = plate.wells[i];
            for (std::size_t j = 0; j < plate.genes.size(); ++j) {
                out << w.well_id << ',' << w.unit_id << ',' << w.group << ',' << w.n_cells << ',' << plate.genes[j] << ',' << format_ct(plate.ct(i, j)) << '\n';
            }
        }
        return;
    }
    out << "well_id,unit_id,group,n_cells";
    for (const auto& g : plate.genes) {
        out << ',' << g;
    }
    out << '\n';
    for (std::size_t i = 0; i < plate.wells.size(); ++i) {
        const auto& w = plate.wells[i];
        out << w.well_id << ',' << w.unit_id << ',' << w.group << ',' << w.n_cells;
        for (std::size_t j = 0; j < plate.genes.size(); ++j) {
            out << ',' << format_ct(plate.ct(i, j));
        }
        out << '\n';
    }
}

inline std::string emit_string(const PlateMatrix& plate, PlateFormat format = PlateFormat::long_format) {
    std::ostringstream out;
    emit(out, plate, format);
    return out.str();
}

/** Report number formatting: `%.10g`, `inf`/`-inf`, and `NA` for undefined values. */
inline std::string format_number(double value) {
    if (std::isnan(value)) {
        return "NA";
    }
    if (std::isinf(value)) {
        return value > 0 ? "inf" : "-inf";
    }
    char buffer[64];
    std::snprintf(buffer, sizeof(buffer), "%.10g", value == 0 ? 0.0 : value);
    return buffer;
}

inline std::string format_number(const std::optional<double>& value) {
    return value ? format_number(*value) : std::string("NA");
}

/**
 * @brief Tab-separated table builder with a fixed header.
 */
class TsvTable {
public:
    explicit TsvTable(std::vector<std::string> header) : my_columns(header.size()) {
        add_row(header);
    }

    template<typename... Fields>
    void row(const Fields&... fields) {
        std::vector<std::string> cells{ cell(fields)... };
        add_row(cells);
    }

    void row_cells(const std::vector<std::string>& cells) { add_row(cells); }

    const std::string& str() const noexcept { return my_text; }

private:
    static std::string cell(const std::string& s) { return s; }
    static std::string cell(std::string_view s) { return std::string(s); }
    static std::string cell(const char* s) { return s; }
    static std::string cell(double v) { return format_number(v); }
    static std::string cell(const std::optional<double>& v) { return format_number(v); }
    static std::string cell(std::size_t v) { return std::to_string(v); }
    static std::string cell(int v) { return std::to_string(v); }
    static std::string cell(bool v) { return v ? "true" : "false"; }

    void add_row(const std::vector<std::string>& cells) {
        if (cells.size() != my_columns) {
            throw DomainError("report row has the wrong number of columns");
        }
        for (std::size_t c = 0; c < cells.size(); ++c) {
            if (c) {
                my_text += '\t';
            }
            my_text += cells[c];
        }
        my_text += '\n';
    }

    std::size_t my_columns;
    std::string my_text;
};

/**
 * @brief Write `content` to a temporary sibling of `path`, then rename it into place.
 */
inline void write_atomic(const std::filesystem::path& path, const std::string& content) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) {
            throw IoError("cannot write '" + tmp.string() + "'");
        }
        out << content;
        out.flush();
        if (!out) {
            throw IoError("failed writing '" + tmp.string() + "'");
        }
    }
    std::error_code ec;
    std::filesystem::rename(tmp, path, ec);
    if (ec) {
        throw IoError("cannot move '" + tmp.string() + "' to '" + path.string() + "': " + ec.message());
    }
}

}

#endif
