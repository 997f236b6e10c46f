#ifndef SAFEODE_IO_HPP
#define SAFEODE_IO_HPP

#include <cstdio>
#include <fstream>
#include <sstream>
#include <stdexcept>
#include <string>

namespace safeode {

// Shortest round-trip decimal form, locale independent. Keeps every data
// file byte-reproducible across runs.
inline std::string fmt_double(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    double back = 0.0;
    std::sscanf(buf, "%lf", &back);
    if (back == v) {
        // try shorter forms that still round-trip
        for (int prec = 1; prec < 17; ++prec) {
            char s[40];
            std::snprintf(s, sizeof(s), "%.*g", prec, v);
            double b2 = 0.0;
            std::sscanf(s, "%lf", &b2);
            if (b2 == v) return std::string(s);
        }
    }
    return std::string(buf);
}

// Exact binary round-trip form for checkpoints.
inline std::string hexfloat(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%a", v);
    return std::string(buf);
}

inline double parse_hexfloat(const std::string& s) {
    double v = 0.0;
    if (std::sscanf(s.c_str(), "%la", &v) != 1)
        throw std::runtime_error("bad float literal: " + s);
    return v;
}

inline void write_text_file(const std::string& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for write: " + path);
    out << text;
    if (!out) throw std::runtime_error("write failed: " + path);
}

inline std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open for read: " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

}  // namespace safeode

#endif
