#pragma once

#include <png.h>

#include <algorithm>
#include <array>
#include <cctype>
#include <charconv>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "holopr/grid.hpp"

namespace holopr::imaging {

namespace detail {

inline std::vector<unsigned char> read_bytes(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error("cannot open '" + path.string() + "' for reading");
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline GrayImage decode_png(const std::vector<unsigned char>& bytes, const std::string& name) {
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_memory(&image, bytes.data(), bytes.size()))
        throw Error("'" + name + "': invalid PNG (" + image.message + ")");
    if (image.width == 0 || image.height == 0) {
        png_image_free(&image);
        throw Error("'" + name + "': zero-dimension image");
    }
    const bool color = (image.format & PNG_FORMAT_FLAG_COLOR) != 0;
    image.format = color ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<unsigned char> buf(PNG_IMAGE_SIZE(image));
    if (!png_image_finish_read(&image, nullptr, buf.data(), 0, nullptr)) {
        std::string msg = image.message;
        png_image_free(&image);
        throw Error("'" + name + "': PNG decode failed (" + msg + ")");
    }
    GrayImage out(image.height, image.width);
    if (color) {
        for (std::size_t i = 0; i < out.size(); ++i) {
            const double r = buf[3 * i], g = buf[3 * i + 1], b = buf[3 * i + 2];
            out[i] = (0.299 * r + 0.587 * g + 0.114 * b) / 255.0;
        }
    } else {
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = buf[i] / 255.0;
    }
    return out;
}

// Binary PGM (P5), maxval up to 65535, comments allowed in the header.
inline GrayImage decode_pgm(const std::vector<unsigned char>& bytes, const std::string& name) {
    std::size_t pos = 2;
    auto next_token = [&]() -> long {
        for (;;) {
            while (pos < bytes.size() && std::isspace(bytes[pos])) ++pos;
            if (pos < bytes.size() && bytes[pos] == '#') {
                while (pos < bytes.size() && bytes[pos] != '\n') ++pos;
                continue;
            }
            break;
        }
        long v = 0;
        std::size_t digits = 0;
        while (pos < bytes.size() && std::isdigit(bytes[pos])) {
            v = v * 10 + (bytes[pos++] - '0');
            if (++digits > 9) throw Error("'" + name + "': malformed PGM header");
        }
        if (digits == 0) throw Error("'" + name + "': malformed PGM header");
        return v;
    };
    const long width = next_token();
    const long height = next_token();
    const long maxval = next_token();
    if (width <= 0 || height <= 0) throw Error("'" + name + "': zero-dimension image");
    if (maxval <= 0 || maxval > 65535) throw Error("'" + name + "': unsupported PGM maxval");
    if (pos >= bytes.size() || !std::isspace(bytes[pos])) throw Error("'" + name + "': malformed PGM header");
    ++pos;
    const std::size_t bpp = maxval > 255 ? 2 : 1;
    const std::size_t count = static_cast<std::size_t>(width) * static_cast<std::size_t>(height);
    if (bytes.size() - pos < count * bpp) throw Error("'" + name + "': truncated PGM data");
    GrayImage out(static_cast<std::size_t>(height), static_cast<std::size_t>(width));
    for (std::size_t i = 0; i < count; ++i) {
        const unsigned v = bpp == 1 ? bytes[pos + i]
                                    : (unsigned(bytes[pos + 2 * i]) << 8) | bytes[pos + 2 * i + 1];
        out[i] = std::min(1.0, static_cast<double>(v) / static_cast<double>(maxval));
    }
    return out;
}

}  // namespace detail

/// Loads a PNG or binary PGM as a grayscale image in [0,1]. Color PNGs are
/// converted with luma weights 0.299 R + 0.587 G + 0.114 B.
inline GrayImage load_image(const std::filesystem::path& path) {
    const auto bytes = detail::read_bytes(path);
    const std::string name = path.string();
    static constexpr std::array<unsigned char, 8> png_magic{0x89, 'P', 'N', 'G', '\r', '\n', 0x1A, '\n'};
    if (bytes.size() >= 8 && std::equal(png_magic.begin(), png_magic.end(), bytes.begin()))
        return detail::decode_png(bytes, name);
    if (bytes.size() >= 2 && bytes[0] == 'P' && bytes[1] == '5') return detail::decode_pgm(bytes, name);
    throw Error("'" + name + "': unsupported image format (expected PNG or binary PGM)");
}

/// Writes an 8-bit grayscale PNG; pixels are clamped to [0,1] and rounded.
inline void save_png(const GrayImage& img, const std::filesystem::path& path) {
    validate_image(img, "save_png");
    std::vector<unsigned char> buf(img.size());
    for (std::size_t i = 0; i < img.size(); ++i)
        buf[i] = static_cast<unsigned char>(std::lround(std::clamp(img[i], 0.0, 1.0) * 255.0));
    png_image image{};
    image.version = PNG_IMAGE_VERSION;
    image.width = static_cast<png_uint_32>(img.width());
    image.height = static_cast<png_uint_32>(img.height());
    image.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&image, path.string().c_str(), 0, buf.data(), 0, nullptr))
        throw Error("cannot write PNG '" + path.string() + "': " + image.message);
}

/// Two-tap linear interpolation weights along one axis: out[i] = (1 - w1) in[i0] + w1 in[i1].
struct BilinearTap {
    std::size_t i0 = 0;
    std::size_t i1 = 0;
    double w1 = 0.0;
};

/// Half-pixel-centre alignment: output sample i reads input coordinate
/// (i + 0.5) * in / out - 0.5, clamped to [0, in - 1]. Shared with the decoder upsampler.
inline std::vector<BilinearTap> bilinear_taps(std::size_t in, std::size_t out) {
    std::vector<BilinearTap> t(out);
    const double scale = static_cast<double>(in) / static_cast<double>(out);
    for (std::size_t i = 0; i < out; ++i) {
        double x = (static_cast<double>(i) + 0.5) * scale - 0.5;
        x = std::clamp(x, 0.0, static_cast<double>(in - 1));
        const auto i0 = static_cast<std::size_t>(std::floor(x));
        const std::size_t i1 = std::min(i0 + 1, in - 1);
        t[i] = {i0, i1, x - static_cast<double>(i0)};
    }
    return t;
}

inline GrayImage resize_bilinear(const GrayImage& img, std::size_t new_h, std::size_t new_w) {
    if (new_h == 0 || new_w == 0) throw Error("resize_bilinear: target size must be at least 1x1");
    if (img.empty()) throw Error("resize_bilinear: empty input");
    const auto rows = bilinear_taps(img.height(), new_h);
    const auto cols = bilinear_taps(img.width(), new_w);
    // Clamped lerp keeps every output inside the hull of its four taps.
    auto lerp = [](double a, double b, double t) {
        return std::clamp(a + t * (b - a), std::min(a, b), std::max(a, b));
    };
    GrayImage out(new_h, new_w);
    for (std::size_t r = 0; r < new_h; ++r) {
        const auto& tr = rows[r];
        for (std::size_t c = 0; c < new_w; ++c) {
            const auto& tc = cols[c];
            const double top = lerp(img(tr.i0, tc.i0), img(tr.i0, tc.i1), tc.w1);
            const double bot = lerp(img(tr.i1, tc.i0), img(tr.i1, tc.i1), tc.w1);
            out(r, c) = lerp(top, bot, tr.w1);
        }
    }
    return out;
}

/// Value at percentile p (0..100) using the rank floor(p * N / 100), clamped to N - 1.
inline double percentile(std::span<const double> values, double p) {
    if (values.empty()) throw Error("percentile: empty input");
    std::vector<double> sorted(values.begin(), values.end());
    std::sort(sorted.begin(), sorted.end());
    const auto n = sorted.size();
    auto idx = static_cast<std::size_t>(std::floor(p * static_cast<double>(n) / 100.0));
    return sorted[std::min(idx, n - 1)];
}

/// Display contrast stretch: maps the lo-percentile to 0 and the hi-percentile
/// to 1, clamping outside. Meant for exported visuals only.
inline GrayImage percentile_rescale(const GrayImage& img, double lo = 1.0, double hi = 99.0) {
    if (!(lo >= 0.0 && lo < hi && hi <= 100.0))
        throw Error("percentile_rescale: require 0 <= lo < hi <= 100");
    validate_image(img, "percentile_rescale");
    const double vlo = percentile(img.values(), lo);
    const double vhi = percentile(img.values(), hi);
    GrayImage out(img.height(), img.width(), 0.5);
    if (vhi == vlo) return out;
    for (std::size_t i = 0; i < img.size(); ++i) out[i] = std::clamp((img[i] - vlo) / (vhi - vlo), 0.0, 1.0);
    return out;
}

// ---------------------------------------------------------------------------
// CSV

using CsvCell = std::variant<std::string, double, std::int64_t>;

/// Column-named table written with one header row.
struct CsvTable {
    std::vector<std::string> header;
    std::vector<std::vector<CsvCell>> rows;

    void add_row(std::vector<CsvCell> row) {
        if (row.size() != header.size()) throw Error("csv: row width does not match header");
        rows.push_back(std::move(row));
    }
};

/// Shortest decimal text that parses back to exactly `v`.
inline std::string format_real(double v) {
    if (std::isnan(v)) return "nan";
    if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

inline std::string csv_escape(const std::string& s) {
    if (s.find_first_of(",\"\n") == std::string::npos) return s;
    std::string out = "\"";
    for (char ch : s) {
        if (ch == '"') out += '"';
        out += ch;
    }
    return out + "\"";
}

inline std::string to_csv_string(const CsvTable& table) {
    std::ostringstream os;
    auto cell = [](const CsvCell& c) -> std::string {
        if (auto* s = std::get_if<std::string>(&c)) return csv_escape(*s);
        if (auto* d = std::get_if<double>(&c)) return format_real(*d);
        return std::to_string(std::get<std::int64_t>(c));
    };
    for (std::size_t i = 0; i < table.header.size(); ++i) os << (i ? "," : "") << csv_escape(table.header[i]);
    os << '\n';
    for (const auto& row : table.rows) {
        for (std::size_t i = 0; i < row.size(); ++i) os << (i ? "," : "") << cell(row[i]);
        os << '\n';
    }
    return os.str();
}

inline void write_text(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw Error("failed writing '" + path.string() + "'");
}

inline void save_csv(const CsvTable& table, const std::filesystem::path& path) {
    write_text(path, to_csv_string(table));
}

/// Parsed CSV: header plus raw string fields (RFC 4180 quoting).
struct CsvData {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;

    std::size_t column(const std::string& name) const {
        auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw Error("csv: missing column '" + name + "'");
        return static_cast<std::size_t>(it - header.begin());
    }
};

inline CsvData parse_csv(const std::string& text) {
    std::vector<std::vector<std::string>> records;
    std::vector<std::string> rec;
    std::string field;
    bool quoted = false, any = false;
    for (std::size_t i = 0; i < text.size(); ++i) {
        const char ch = text[i];
        if (quoted) {
            if (ch == '"') {
                if (i + 1 < text.size() && text[i + 1] == '"') {
                    field += '"';
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field += ch;
            }
            continue;
        }
        if (ch == '"') {
            quoted = any = true;
        } else if (ch == ',') {
            rec.push_back(std::move(field));
            field.clear();
            any = true;
        } else if (ch == '\n' || ch == '\r') {
            if (ch == '\r' && i + 1 < text.size() && text[i + 1] == '\n') ++i;
            if (any || !field.empty()) {
                rec.push_back(std::move(field));
                records.push_back(std::move(rec));
            }
            rec.clear();
            field.clear();
            any = false;
        } else {
            field += ch;
            any = true;
        }
    }
    if (quoted) throw Error("csv: unterminated quoted field");
    if (any || !field.empty()) {
        rec.push_back(std::move(field));
        records.push_back(std::move(rec));
    }
    if (records.empty()) throw Error("csv: missing header row");
    CsvData data;
    data.header = std::move(records.front());
    for (std::size_t i = 1; i < records.size(); ++i) {
        if (records[i].size() != data.header.size())
            throw Error("csv: row " + std::to_string(i) + " has " + std::to_string(records[i].size()) +
                        " fields, expected " + std::to_string(data.header.size()));
        data.rows.push_back(std::move(records[i]));
    }
    return data;
}

inline CsvData load_csv(const std::filesystem::path& path) {
    const auto bytes = detail::read_bytes(path);
    return parse_csv(std::string(bytes.begin(), bytes.end()));
}

inline double parse_real(const std::string& s) {
    std::size_t used = 0;
    double v = 0.0;
    try {
        v = std::stod(s, &used);
    } catch (const std::exception&) {
        throw Error("csv: '" + s + "' is not a number");
    }
    if (used != s.size()) throw Error("csv: '" + s + "' is not a number");
    return v;
}

}  // namespace holopr::imaging
