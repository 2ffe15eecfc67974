#pragma once

// 8-bit grayscale frames, binary masks and their file formats (binary PGM, PNG).

#include <png.h>

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdint>
#include <cstdio>
#include <fstream>
#include <string>
#include <vector>

#include "icf/core.hpp"

namespace icf {

struct RasterFrame {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> data;  // row-major
    double timestamp = 0.0;          // s

    RasterFrame() = default;
    RasterFrame(int w, int h, std::uint8_t fill = 0, double t = 0.0)
        : width(w), height(h), data(checked_size(w, h), fill), timestamp(t) {}

    std::uint8_t& at(int x, int y) { return data[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)]; }
    std::uint8_t at(int x, int y) const { return data[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)]; }
    /// Border-replicated read.
    std::uint8_t clamped(int x, int y) const { return at(std::clamp(x, 0, width - 1), std::clamp(y, 0, height - 1)); }
    bool contains(int x, int y) const { return x >= 0 && y >= 0 && x < width && y < height; }

    void validate() const {
        if (width <= 0 || height <= 0) throw InvalidInput("frame: dimensions must be positive");
        if (data.size() != static_cast<std::size_t>(width) * static_cast<std::size_t>(height))
            throw InvalidInput("frame: pixel count does not match dimensions");
    }

    static std::size_t checked_size(int w, int h) {
        if (w <= 0 || h <= 0) throw InvalidInput("frame: dimensions must be positive");
        return static_cast<std::size_t>(w) * static_cast<std::size_t>(h);
    }
};

struct BinaryMask {
    int width = 0;
    int height = 0;
    std::vector<std::uint8_t> bits;  // 1 = foreground

    BinaryMask() = default;
    BinaryMask(int w, int h) : width(w), height(h), bits(RasterFrame::checked_size(w, h), 0) {}

    bool get(int x, int y) const {
        return x >= 0 && y >= 0 && x < width && y < height &&
               bits[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] != 0;
    }
    void set(int x, int y, bool v = true) {
        bits[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)] = v ? 1 : 0;
    }
    std::size_t count() const { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1})); }
    bool same_shape(const BinaryMask& o) const { return width == o.width && height == o.height; }
};

/// Luma (ITU-R BT.601) conversion for colour input.
inline std::uint8_t rgb_to_gray(std::uint8_t r, std::uint8_t g, std::uint8_t b) {
    return static_cast<std::uint8_t>(std::lround(0.299 * r + 0.587 * g + 0.114 * b));
}

inline RasterFrame mask_to_frame(const BinaryMask& m) {
    RasterFrame f(m.width, m.height, 255);
    for (std::size_t i = 0; i < m.bits.size(); ++i) f.data[i] = m.bits[i] ? 0 : 255;
    return f;
}

// --- PGM ---------------------------------------------------------------------

inline void write_pgm(const std::string& path, const RasterFrame& f) {
    f.validate();
    std::ofstream out(path, std::ios::binary);
    if (!out) throw InvalidInput("cannot write '" + path + "'");
    out << "P5\n" << f.width << ' ' << f.height << "\n255\n";
    out.write(reinterpret_cast<const char*>(f.data.data()), static_cast<std::streamsize>(f.data.size()));
    if (!out) throw InvalidInput("write failed for '" + path + "'");
}

inline RasterFrame read_pgm(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw InvalidInput("cannot open '" + path + "'");
    auto token = [&]() {
        std::string t;
        int c;
        while ((c = in.get()) != EOF) {
            if (c == '#') {
                while ((c = in.get()) != EOF && c != '\n') {}
                continue;
            }
            if (std::isspace(c)) {
                if (!t.empty()) break;
                continue;
            }
            t.push_back(static_cast<char>(c));
        }
        return t;
    };
    if (token() != "P5") throw ParseError(path + ": not a binary PGM (P5)", 1);
    int w = 0, h = 0, maxval = 0;
    try {
        w = std::stoi(token());
        h = std::stoi(token());
        maxval = std::stoi(token());
    } catch (const std::exception&) {
        throw ParseError(path + ": malformed PGM header", 1);
    }
    if (w <= 0 || h <= 0) throw ParseError(path + ": bad PGM dimensions", 1);
    if (maxval != 255) throw ParseError(path + ": only 8-bit PGM is supported", 1);
    RasterFrame f(w, h);
    in.read(reinterpret_cast<char*>(f.data.data()), static_cast<std::streamsize>(f.data.size()));
    if (in.gcount() != static_cast<std::streamsize>(f.data.size())) throw ParseError(path + ": truncated PGM data", 0);
    return f;
}

// --- PNG ---------------------------------------------------------------------

/// Reads any PNG as 8-bit gray; colour input goes through rgb_to_gray.
inline RasterFrame read_png(const std::string& path) {
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    if (!png_image_begin_read_from_file(&img, path.c_str()))
        throw InvalidInput("cannot read PNG '" + path + "': " + img.message);
    const bool colour = (img.format & PNG_FORMAT_FLAG_COLOR) != 0;
    img.format = colour ? PNG_FORMAT_RGB : PNG_FORMAT_GRAY;
    std::vector<std::uint8_t> buf(PNG_IMAGE_SIZE(img));
    if (!png_image_finish_read(&img, nullptr, buf.data(), 0, nullptr)) {
        const std::string msg = img.message;
        png_image_free(&img);
        throw InvalidInput("cannot decode PNG '" + path + "': " + msg);
    }
    RasterFrame f(static_cast<int>(img.width), static_cast<int>(img.height));
    if (colour) {
        for (std::size_t i = 0; i < f.data.size(); ++i) f.data[i] = rgb_to_gray(buf[3 * i], buf[3 * i + 1], buf[3 * i + 2]);
    } else {
        f.data = std::move(buf);
    }
    return f;
}

inline void write_png(const std::string& path, const RasterFrame& f) {
    f.validate();
    png_image img{};
    img.version = PNG_IMAGE_VERSION;
    img.width = static_cast<png_uint_32>(f.width);
    img.height = static_cast<png_uint_32>(f.height);
    img.format = PNG_FORMAT_GRAY;
    if (!png_image_write_to_file(&img, path.c_str(), 0, f.data.data(), 0, nullptr))
        throw InvalidInput("cannot write PNG '" + path + "': " + img.message);
}

inline bool has_suffix(const std::string& s, const std::string& suf) {
    if (s.size() < suf.size()) return false;
    for (std::size_t i = 0; i < suf.size(); ++i)
        if (std::tolower(static_cast<unsigned char>(s[s.size() - suf.size() + i])) != suf[i]) return false;
    return true;
}

/// Dispatches on the extension: .png, otherwise binary PGM.
inline RasterFrame read_frame(const std::string& path) {
    return has_suffix(path, ".png") ? read_png(path) : read_pgm(path);
}

inline void write_frame(const std::string& path, const RasterFrame& f) {
    if (has_suffix(path, ".png")) write_png(path, f);
    else write_pgm(path, f);
}

}  // namespace icf
