#pragma once

#include <Eigen/Dense>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "sfsod/errors.hpp"

namespace sfsod {

/// A parsed numeric CSV: header row plus an all-double value matrix.
struct CsvTable {
    std::vector<std::string> columns;
    Eigen::MatrixXd values;

    int find_column(const std::string& name) const {
        for (size_t j = 0; j < columns.size(); ++j)
            if (columns[j] == name) return static_cast<int>(j);
        return -1;
    }
};

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : line) {
        if (ch == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (ch != '\r') {
            cur.push_back(ch);
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace detail

/// Strict CSV reader: comma separated, UTF-8, header required, scientific
/// notation accepted, missing values rejected. Errors carry line numbers.
inline CsvTable read_csv(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw DataError("cannot open CSV file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw DataError(path + ": missing header row");
    CsvTable table;
    table.columns = detail::split_csv_line(line);
    const size_t width = table.columns.size();
    if (width == 0 || (width == 1 && table.columns[0].empty()))
        throw DataError(path + ": empty header row");

    std::vector<double> data;
    int line_no = 1;
    int rows = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (line.empty()) continue;
        const auto cells = detail::split_csv_line(line);
        if (cells.size() != width)
            throw DataError(path + ": line " + std::to_string(line_no) + " has " +
                            std::to_string(cells.size()) + " fields, expected " +
                            std::to_string(width));
        for (size_t j = 0; j < cells.size(); ++j) {
            const std::string& cell = cells[j];
            if (cell.empty())
                throw DataError(path + ": line " + std::to_string(line_no) + ", column " +
                                table.columns[j] + ": missing value");
            char* end = nullptr;
            const double v = std::strtod(cell.c_str(), &end);
            if (end == cell.c_str() || *end != '\0')
                throw DataError(path + ": line " + std::to_string(line_no) + ", column " +
                                table.columns[j] + ": cannot parse '" + cell + "'");
            data.push_back(v);
        }
        ++rows;
    }
    table.values.resize(rows, static_cast<Eigen::Index>(width));
    for (int i = 0; i < rows; ++i)
        for (size_t j = 0; j < width; ++j)
            table.values(i, static_cast<Eigen::Index>(j)) = data[static_cast<size_t>(i) * width + j];
    return table;
}

inline std::string format_double(double v, const char* fmt = "%.6g") {
    char buf[64];
    std::snprintf(buf, sizeof(buf), fmt, v);
    return std::string(buf);
}

/// Writer with a fixed float format, for reproducible report files.
class CsvWriter {
  public:
    explicit CsvWriter(const std::string& path, const char* fmt = "%.6g") : out_(path), fmt_(fmt) {
        if (!out_) throw DataError("cannot open CSV output path: " + path);
    }

    void write_row(const std::vector<std::string>& cells) {
        for (size_t j = 0; j < cells.size(); ++j) {
            if (j) out_ << ',';
            out_ << cells[j];
        }
        out_ << '\n';
    }

    std::string num(double v) const { return format_double(v, fmt_); }

  private:
    std::ofstream out_;
    const char* fmt_;
};

}  // namespace sfsod
