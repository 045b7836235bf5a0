#pragma once

#include <cerrno>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "orthofactor/errors.hpp"
#include "orthofactor/linalg.hpp"

namespace orthofactor {

/// Round-trip decimal form (%.17g); "nan"/"inf" spelled out.
inline std::string format_double(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

inline std::ofstream open_output(const std::filesystem::path& path) {
    std::error_code ec;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path(), ec);
    if (ec) throw IoError("cannot create directory " + path.parent_path().string() + ": " + ec.message());
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw IoError("cannot open " + path.string() + " for writing");
    return out;
}

inline void close_output(std::ofstream& out, const std::filesystem::path& path) {
    out.close();
    if (!out) throw IoError("failed writing " + path.string());
}

/// Header line (optional) followed by rows of numbers.
class CsvWriter {
public:
    explicit CsvWriter(std::filesystem::path path) : path_(std::move(path)), out_(open_output(path_)) {}

    void header(const std::vector<std::string>& cols) { line(cols); }

    void line(const std::vector<std::string>& cells) {
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (i) out_ << ',';
            out_ << cells[i];
        }
        out_ << '\n';
    }

    void close() { close_output(out_, path_); }

private:
    std::filesystem::path path_;
    std::ofstream out_;
};

/// Writes M without a header, one matrix row per line.
inline void write_matrix_csv(const std::filesystem::path& path, const Matrix& M) {
    auto out = open_output(path);
    for (Index i = 0; i < M.rows(); ++i) {
        for (Index j = 0; j < M.cols(); ++j) {
            if (j) out << ',';
            out << format_double(M(i, j));
        }
        out << '\n';
    }
    close_output(out, path);
}

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> cells;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            cells.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    cells.push_back(cur);
    for (auto& c : cells) {
        const auto b = c.find_first_not_of(" \t");
        const auto e = c.find_last_not_of(" \t");
        c = b == std::string::npos ? std::string() : c.substr(b, e - b + 1);
    }
    return cells;
}

inline bool is_missing_cell(const std::string& c) { return c.empty() || c == "NA" || c == "na" || c == "NaN" || c == "nan"; }

inline bool parse_number(const std::string& c, double& out) {
    if (c.empty()) return false;
    errno = 0;
    char* end = nullptr;
    out = std::strtod(c.c_str(), &end);
    return end == c.c_str() + c.size() && errno != ERANGE;
}

struct CsvMatrix {
    Matrix values;
    std::vector<std::string> header;        // empty when the file had none
    std::vector<std::size_t> dropped_rows;  // 1-based data-row numbers with missing cells
};

/// Numeric matrix from CSV. A first line with any non-numeric, non-missing
/// cell is taken as a header when `allow_header` is set. Rows with missing
/// cells are dropped when `drop_missing` is set and rejected otherwise.
inline CsvMatrix read_matrix_csv(const std::filesystem::path& path, bool allow_header = false,
                                 bool drop_missing = false) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    CsvMatrix out;
    std::vector<std::vector<double>> rows;
    std::string line;
    std::size_t line_no = 0, data_row = 0, width = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        const auto cells = split_csv_line(line);
        std::vector<double> vals(cells.size());
        bool missing = false, bad = false;
        for (std::size_t i = 0; i < cells.size(); ++i) {
            if (is_missing_cell(cells[i])) missing = true;
            else if (!parse_number(cells[i], vals[i])) bad = true;
        }
        if (bad && rows.empty() && out.header.empty() && data_row == 0 && allow_header) {
            out.header = cells;
            width = cells.size();
            continue;
        }
        if (bad) throw IoError(path.string() + ":" + std::to_string(line_no) + ": non-numeric cell");
        if (width == 0) width = cells.size();
        if (cells.size() != width)
            throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) +
                          " cells, found " + std::to_string(cells.size()));
        ++data_row;
        if (missing) {
            if (!drop_missing) throw IoError(path.string() + ":" + std::to_string(line_no) + ": missing value");
            out.dropped_rows.push_back(data_row);
            continue;
        }
        rows.push_back(std::move(vals));
    }
    if (rows.empty()) throw IoError(path.string() + ": no complete data rows");
    out.values.resize(static_cast<Index>(rows.size()), static_cast<Index>(width));
    for (std::size_t i = 0; i < rows.size(); ++i)
        for (std::size_t j = 0; j < width; ++j) out.values(static_cast<Index>(i), static_cast<Index>(j)) = rows[i][j];
    return out;
}

inline std::string read_text_file(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw IoError("cannot open " + path.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace orthofactor
