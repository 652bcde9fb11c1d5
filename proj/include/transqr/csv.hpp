#pragma once

// Study CSV format: header row, first column `y`, covariates x1..xp,
// '.' decimal separator. Errors carry row/column diagnostics.

#include <charconv>
#include <cstdio>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include "transqr/types.hpp"

namespace transqr {

namespace detail {

inline std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : line) {
        if (c == ',') {
            out.push_back(cur);
            cur.clear();
        } else if (c != '\r') {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

inline double parse_double(const std::string& tok, size_t row, size_t col) {
    double v = 0.0;
    const char* b = tok.data();
    const char* e = b + tok.size();
    while (b < e && (*b == ' ' || *b == '\t')) ++b;
    auto res = std::from_chars(b, e, v);
    if (res.ec != std::errc{} || res.ptr != e)
        throw InputError("CSV row " + std::to_string(row) + ", column " + std::to_string(col) +
                         ": cannot parse '" + tok + "' as a number");
    return v;
}

}  // namespace detail

inline Study read_study_csv(const std::string& path, const std::string& id,
                            StudyRole role) {
    std::ifstream in(path);
    if (!in) throw InputError("cannot open CSV file: " + path);
    std::string line;
    if (!std::getline(in, line)) throw InputError(path + ": empty file");
    const auto header = detail::split_csv_line(line);
    if (header.empty() || header[0] != "y")
        throw InputError(path + ": first header column must be 'y'");
    const size_t p = header.size() - 1;
    if (p == 0) throw InputError(path + ": no covariate columns");

    std::vector<double> ys;
    std::vector<double> xs;
    size_t row = 1;
    while (std::getline(in, line)) {
        ++row;
        if (line.empty()) continue;
        const auto toks = detail::split_csv_line(line);
        if (toks.size() != header.size())
            throw InputError(path + ": row " + std::to_string(row) + " has " +
                             std::to_string(toks.size()) + " fields, expected " +
                             std::to_string(header.size()));
        ys.push_back(detail::parse_double(toks[0], row, 1));
        for (size_t j = 1; j < toks.size(); ++j)
            xs.push_back(detail::parse_double(toks[j], row, j + 1));
    }
    if (ys.empty()) throw InputError(path + ": no data rows");

    Study s;
    s.id = id;
    s.role = role;
    const auto n = static_cast<Eigen::Index>(ys.size());
    s.y = Eigen::Map<Vector>(ys.data(), n);
    s.X = Eigen::Map<Matrix>(xs.data(), n, static_cast<Eigen::Index>(p));
    s.validate();
    return s;
}

inline void write_study_csv(const Study& s, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw InputError("cannot write CSV file: " + path);
    out << "y";
    for (Eigen::Index j = 0; j < s.p(); ++j) out << ",x" << (j + 1);
    out << "\n";
    char buf[32];
    for (Eigen::Index i = 0; i < s.n(); ++i) {
        std::snprintf(buf, sizeof buf, "%.17g", s.y[i]);
        out << buf;
        for (Eigen::Index j = 0; j < s.p(); ++j) {
            std::snprintf(buf, sizeof buf, "%.17g", s.X(i, j));
            out << ',' << buf;
        }
        out << "\n";
    }
}

}  // namespace transqr
