#pragma once

// Binary PPM images, PFM depth maps and ASCII PLY point clouds.

#include "salf/framebuffer.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <string>
#include <vector>

namespace salf {

/// [0, 1] -> byte, clamped, rounding half up.
inline uint8_t to_byte(double v) {
    const double c = std::clamp(std::isfinite(v) ? v : 0.0, 0.0, 1.0);
    return static_cast<uint8_t>(std::floor(c * 255.0 + 0.5));
}

inline std::string encode_ppm(const Framebuffer& fb) {
    std::string out = "P6\n" + std::to_string(fb.width) + " " + std::to_string(fb.height) + "\n255\n";
    out.reserve(out.size() + fb.rgb.size());
    for (double v : fb.rgb) out.push_back(static_cast<char>(to_byte(v)));
    return out;
}

inline void write_file(const std::string& path, const std::string& bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "' for writing");
    f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!f) throw std::runtime_error("write failed: '" + path + "'");
}

inline std::string read_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    std::ostringstream ss;
    ss << f.rdbuf();
    return ss.str();
}

inline void write_ppm(const Framebuffer& fb, const std::string& path) { write_file(path, encode_ppm(fb)); }

namespace detail {

/// Reads whitespace-separated header tokens, skipping '#' comments.
inline std::string next_token(const std::string& s, std::size_t& pos) {
    while (pos < s.size()) {
        if (std::isspace(static_cast<unsigned char>(s[pos]))) {
            ++pos;
        } else if (s[pos] == '#') {
            while (pos < s.size() && s[pos] != '\n') ++pos;
        } else {
            break;
        }
    }
    std::size_t start = pos;
    while (pos < s.size() && !std::isspace(static_cast<unsigned char>(s[pos]))) ++pos;
    return s.substr(start, pos - start);
}

}  // namespace detail

inline Framebuffer decode_ppm(const std::string& bytes, const std::string& what = "ppm") {
    std::size_t pos = 0;
    if (detail::next_token(bytes, pos) != "P6") throw std::runtime_error(what + ": not a binary PPM (P6)");
    const int w = std::stoi(detail::next_token(bytes, pos));
    const int h = std::stoi(detail::next_token(bytes, pos));
    const int maxval = std::stoi(detail::next_token(bytes, pos));
    if (w < 1 || h < 1 || maxval != 255) throw std::runtime_error(what + ": unsupported size or maxval");
    ++pos;  // single whitespace after maxval
    const std::size_t need = 3 * static_cast<std::size_t>(w) * h;
    if (bytes.size() - pos < need) throw std::runtime_error(what + ": truncated pixel data");
    Framebuffer fb(w, h);
    for (std::size_t i = 0; i < need; ++i) fb.rgb[i] = static_cast<uint8_t>(bytes[pos + i]) / 255.0;
    std::fill(fb.opacity.begin(), fb.opacity.end(), 1.0);
    return fb;
}

inline Framebuffer read_ppm(const std::string& path) { return decode_ppm(read_file(path), path); }

/// Single-channel little-endian PFM of the depth buffer, bottom row first as
/// the format prescribes. Missing depth is written as 0.
inline void write_pfm_depth(const Framebuffer& fb, const std::string& path) {
    std::string out = "Pf\n" + std::to_string(fb.width) + " " + std::to_string(fb.height) + "\n-1.0\n";
    for (int y = fb.height - 1; y >= 0; --y) {
        for (int x = 0; x < fb.width; ++x) {
            const double d = fb.depth[fb.index(x, y)];
            const float f = std::isfinite(d) ? static_cast<float>(d) : 0.0f;
            char b[4];
            std::memcpy(b, &f, 4);
            out.append(b, 4);
        }
    }
    write_file(path, out);
}

/// Depth map from a PFM written by write_pfm_depth; zeros become NaN.
inline std::vector<double> read_pfm_depth(const std::string& path, int& width, int& height) {
    const std::string bytes = read_file(path);
    std::size_t pos = 0;
    if (detail::next_token(bytes, pos) != "Pf") throw std::runtime_error(path + ": not a grayscale PFM");
    width = std::stoi(detail::next_token(bytes, pos));
    height = std::stoi(detail::next_token(bytes, pos));
    const double scale = std::stod(detail::next_token(bytes, pos));
    if (scale >= 0.0) throw std::runtime_error(path + ": big-endian PFM is not supported");
    ++pos;
    const std::size_t n = static_cast<std::size_t>(width) * height;
    if (bytes.size() - pos < 4 * n) throw std::runtime_error(path + ": truncated PFM data");
    std::vector<double> out(n);
    for (int y = height - 1, r = 0; y >= 0; --y, ++r) {
        for (int x = 0; x < width; ++x) {
            float f;
            std::memcpy(&f, bytes.data() + pos + 4 * (static_cast<std::size_t>(r) * width + x), 4);
            out[static_cast<std::size_t>(y) * width + x] = f > 0.0f ? f : std::numeric_limits<double>::quiet_NaN();
        }
    }
    return out;
}

/// ASCII PLY with one vertex per row; each row holds `columns` values.
inline std::string encode_ply(const std::vector<std::vector<double>>& rows, const std::vector<std::string>& columns) {
    std::ostringstream os;
    os << "ply\nformat ascii 1.0\nelement vertex " << rows.size() << '\n';
    for (const auto& c : columns) os << "property double " << c << '\n';
    os << "end_header\n";
    os << std::setprecision(17);
    for (const auto& r : rows) {
        for (std::size_t k = 0; k < r.size(); ++k) os << (k ? " " : "") << r[k];
        os << '\n';
    }
    return os.str();
}

/// Returns of a LiDAR sweep as world points; rays without a return are omitted.
inline std::string encode_pointcloud(const std::vector<Vec3>& origins, const std::vector<Vec3>& dirs,
                                     const std::vector<double>& ranges) {
    if (origins.size() != ranges.size() || dirs.size() != ranges.size())
        throw std::invalid_argument("encode_pointcloud: size mismatch");
    std::vector<std::vector<double>> rows;
    for (std::size_t i = 0; i < ranges.size(); ++i) {
        if (!std::isfinite(ranges[i])) continue;
        const Vec3 p = origins[i] + ranges[i] * dirs[i];
        rows.push_back({p.x(), p.y(), p.z()});
    }
    return encode_ply(rows, {"x", "y", "z"});
}

inline std::vector<Vec3> points_of_rows(const std::vector<std::vector<double>>& rows) {
    std::vector<Vec3> out;
    for (const auto& r : rows) {
        if (r.size() < 3) throw std::runtime_error("PLY vertex with fewer than 3 values");
        out.emplace_back(r[0], r[1], r[2]);
    }
    return out;
}

/// ASCII PLY reader for files written by encode_ply.
inline std::vector<std::vector<double>> read_ply_rows(const std::string& path, std::vector<std::string>* columns = nullptr) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open '" + path + "'");
    std::string line;
    std::size_t count = 0;
    std::vector<std::string> cols;
    if (!std::getline(f, line) || line != "ply") throw std::runtime_error(path + ": not a PLY file");
    while (std::getline(f, line)) {
        std::istringstream ls(line);
        std::string tok;
        ls >> tok;
        if (tok == "format") {
            std::string fmt;
            ls >> fmt;
            if (fmt != "ascii") throw std::runtime_error(path + ": only ASCII PLY is supported");
        } else if (tok == "element") {
            std::string name;
            ls >> name >> count;
        } else if (tok == "property") {
            std::string type, name;
            ls >> type >> name;
            cols.push_back(name);
        } else if (tok == "end_header") {
            break;
        }
    }
    std::vector<std::vector<double>> rows;
    rows.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        if (!std::getline(f, line)) throw std::runtime_error(path + ": fewer vertices than declared");
        std::istringstream ls(line);
        std::vector<double> r(cols.size());
        for (auto& v : r)
            if (!(ls >> v)) throw std::runtime_error(path + ": malformed vertex row " + std::to_string(i));
        rows.push_back(std::move(r));
    }
    if (columns) *columns = cols;
    return rows;
}

}  // namespace salf
