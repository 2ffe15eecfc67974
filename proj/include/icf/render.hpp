#pragma once

// Anti-aliased coverage rasterization of strokes and discs, composed into
// 8-bit frames with optional seeded Gaussian noise.
//
// Coordinates are in pixels; pixel (i, j) covers [i, i+1) x [j, j+1).
// Coverage is a box-filter estimate from the distance of the pixel centre
// to the shape boundary, clamped to [0, 1].

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

#include "icf/core.hpp"
#include "icf/raster.hpp"

namespace icf::render {

struct Coverage {
    int width = 0, height = 0;
    std::vector<float> v;

    Coverage(int w, int h) : width(w), height(h), v(RasterFrame::checked_size(w, h), 0.0f) {}
    void raise(int x, int y, double c) {
        if (x < 0 || y < 0 || x >= width || y >= height || c <= 0.0) return;
        float& dst = v[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)];
        dst = std::max(dst, static_cast<float>(std::min(c, 1.0)));
    }
    double at(int x, int y) const { return v[static_cast<std::size_t>(y) * static_cast<std::size_t>(width) + static_cast<std::size_t>(x)]; }
};

inline double clamp01(double v) { return std::clamp(v, 0.0, 1.0); }

/// Stroke of half-width `hw` along a polyline with round joins. Butt caps clip
/// every segment against the end half-planes, so joins near an end cannot poke
/// past it; otherwise the ends are round.
inline void stroke(Coverage& cov, const std::vector<Vec2>& pts, double hw, bool butt_caps = true) {
    if (pts.size() < 2 || !(hw > 0.0)) return;
    const Vec2 t_first = (pts[1] - pts[0]).normalized();
    const Vec2 t_last = (pts.back() - pts[pts.size() - 2]).normalized();
    const std::size_t nseg = pts.size() - 1;
    for (std::size_t k = 0; k < nseg; ++k) {
        const Vec2 a = pts[k], b = pts[k + 1];
        const Vec2 ab = b - a;
        const double len = ab.norm();
        if (len <= 0.0) continue;
        const Vec2 t = ab / len;
        const double pad = hw + 1.5;
        const int x0 = static_cast<int>(std::floor(std::min(a.x, b.x) - pad)), x1 = static_cast<int>(std::ceil(std::max(a.x, b.x) + pad));
        const int y0 = static_cast<int>(std::floor(std::min(a.y, b.y) - pad)), y1 = static_cast<int>(std::ceil(std::max(a.y, b.y) + pad));
        for (int y = std::max(y0, 0); y <= std::min(y1, cov.height - 1); ++y)
            for (int x = std::max(x0, 0); x <= std::min(x1, cov.width - 1); ++x) {
                const Vec2 p{x + 0.5, y + 0.5};
                const double along = dot(p - a, t);
                double c;
                if (along < 0.0) c = clamp01(hw + 0.5 - distance(p, a));
                else if (along > len) c = clamp01(hw + 0.5 - distance(p, b));
                else c = clamp01(hw + 0.5 - std::abs(cross(t, p - a)));
                if (butt_caps) {
                    c = std::min(c, clamp01(0.5 + dot(p - pts.front(), t_first)));
                    c = std::min(c, clamp01(0.5 + dot(pts.back() - p, t_last)));
                }
                cov.raise(x, y, c);
            }
    }
}

/// Filled disc.
inline void disc(Coverage& cov, Vec2 c, double r) {
    const int x0 = static_cast<int>(std::floor(c.x - r - 1.0)), x1 = static_cast<int>(std::ceil(c.x + r + 1.0));
    const int y0 = static_cast<int>(std::floor(c.y - r - 1.0)), y1 = static_cast<int>(std::ceil(c.y + r + 1.0));
    for (int y = std::max(y0, 0); y <= std::min(y1, cov.height - 1); ++y)
        for (int x = std::max(x0, 0); x <= std::min(x1, cov.width - 1); ++x)
            cov.raise(x, y, clamp01(r + 0.5 - distance({x + 0.5, y + 0.5}, c)));
}

/// Band of the given thickness on the right-hand side of the polyline (the
/// side of -perp(direction)); its inner boundary follows the polyline.
inline void band(Coverage& cov, const std::vector<Vec2>& pts, double thickness) {
    if (pts.size() < 2) return;
    std::vector<Vec2> off(pts.size());
    for (std::size_t i = 0; i < pts.size(); ++i) {
        Vec2 n;
        if (i > 0) n += (pts[i] - pts[i - 1]).normalized().perp();
        if (i + 1 < pts.size()) n += (pts[i + 1] - pts[i]).normalized().perp();
        n = n.normalized();
        off[i] = pts[i] - n * (0.5 * thickness);
    }
    stroke(cov, off, 0.5 * thickness, false);
}

struct Levels {
    std::uint8_t background = 220;
    std::uint8_t wall = 160;
    std::uint8_t wire = 40;
};

/// Background, then walls, then the wire, each blended by coverage; optional
/// additive Gaussian noise from a seeded generator.
inline RasterFrame compose(const Coverage& walls, const Coverage& wire, const Levels& lv, double noise_sigma,
                           std::uint64_t seed, double timestamp = 0.0) {
    if (walls.width != wire.width || walls.height != wire.height) throw InvalidInput("compose: layer sizes differ");
    RasterFrame f(walls.width, walls.height, lv.background, timestamp);
    std::mt19937_64 rng(seed);
    std::normal_distribution<double> noise(0.0, noise_sigma > 0.0 ? noise_sigma : 1.0);
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) {
            double v = lv.background;
            const double cw = walls.at(x, y), cg = wire.at(x, y);
            v = v * (1.0 - cw) + lv.wall * cw;
            v = v * (1.0 - cg) + lv.wire * cg;
            if (noise_sigma > 0.0) v += noise(rng);
            f.at(x, y) = static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
        }
    return f;
}

}  // namespace icf::render
