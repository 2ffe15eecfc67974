#pragma once

// Vessel-boundary and guidewire extraction from grayscale frames, and the
// moving-search-window sweep that recovers centerline, contacts and tip.
//
// Pixel (i, j) covers [i, i+1) x [j, j+1); its center is (i + 0.5, j + 0.5).
// Image y points down.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "icf/core.hpp"
#include "icf/csv.hpp"
#include "icf/raster.hpp"

namespace icf::seg {

// --- filtering ------------------------------------------------------------------

/// Standard size-to-sigma rule: sigma = 0.3 ((k - 1) / 2 - 1) + 0.8.
inline double gaussian_sigma(int kernel_size) { return 0.3 * ((kernel_size - 1) * 0.5 - 1.0) + 0.8; }

inline std::vector<double> gaussian_kernel(int kernel_size) {
    if (kernel_size < 3 || kernel_size % 2 == 0) throw InvalidInput("gaussian kernel size must be odd and >= 3");
    const double sigma = gaussian_sigma(kernel_size);
    const int r = kernel_size / 2;
    std::vector<double> k(static_cast<std::size_t>(kernel_size));
    double sum = 0.0;
    for (int i = -r; i <= r; ++i) {
        const double v = std::exp(-0.5 * i * i / (sigma * sigma));
        k[static_cast<std::size_t>(i + r)] = v;
        sum += v;
    }
    for (double& v : k) v /= sum;
    return k;
}

inline std::uint8_t to_u8(double v) {
    return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

/// Separable Gaussian blur with replicated border, rounded back to 8 bit.
inline RasterFrame gaussian_blur(const RasterFrame& in, int kernel_size = 5) {
    in.validate();
    const std::vector<double> k = gaussian_kernel(kernel_size);
    const int r = kernel_size / 2, w = in.width, h = in.height;
    std::vector<double> tmp(in.data.size());
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) acc += k[static_cast<std::size_t>(i + r)] * in.clamped(x + i, y);
            tmp[static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)] = acc;
        }
    RasterFrame out(w, h, 0, in.timestamp);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            double acc = 0.0;
            for (int i = -r; i <= r; ++i) {
                const int yy = std::clamp(y + i, 0, h - 1);
                acc += k[static_cast<std::size_t>(i + r)] * tmp[static_cast<std::size_t>(yy) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x)];
            }
            out.at(x, y) = to_u8(acc);
        }
    return out;
}

struct Gradient {
    int width = 0, height = 0;
    std::vector<int> gx, gy;
    std::vector<double> mag;
};

/// 3x3 Sobel derivatives with replicated border.
inline Gradient sobel(const RasterFrame& f) {
    f.validate();
    Gradient g{f.width, f.height, {}, {}, {}};
    g.gx.resize(f.data.size());
    g.gy.resize(f.data.size());
    g.mag.resize(f.data.size());
    for (int y = 0; y < f.height; ++y)
        for (int x = 0; x < f.width; ++x) {
            auto p = [&](int dx, int dy) { return static_cast<int>(f.clamped(x + dx, y + dy)); };
            const int gx = (p(1, -1) + 2 * p(1, 0) + p(1, 1)) - (p(-1, -1) + 2 * p(-1, 0) + p(-1, 1));
            const int gy = (p(-1, 1) + 2 * p(0, 1) + p(1, 1)) - (p(-1, -1) + 2 * p(0, -1) + p(1, -1));
            const auto i = static_cast<std::size_t>(y) * static_cast<std::size_t>(f.width) + static_cast<std::size_t>(x);
            g.gx[i] = gx;
            g.gy[i] = gy;
            g.mag[i] = std::hypot(gx, gy);
        }
    return g;
}

/// Canny edges: Sobel gradients, non-maximum suppression along the quantized
/// gradient direction, then hysteresis between high / ratio and high.
inline BinaryMask canny_edges(const RasterFrame& f, double high_threshold = 100.0, double ratio_low_high = 5.0) {
    if (!(high_threshold > 0.0)) throw InvalidInput("canny: threshold must be positive");
    if (!(ratio_low_high >= 1.0)) throw InvalidInput("canny: low/high ratio must be >= 1");
    const Gradient g = sobel(f);
    const int w = f.width, h = f.height;
    const double low = high_threshold / ratio_low_high;
    auto idx = [w](int x, int y) { return static_cast<std::size_t>(y) * static_cast<std::size_t>(w) + static_cast<std::size_t>(x); };

    // 0 suppressed, 1 weak, 2 strong.
    std::vector<std::uint8_t> cls(f.data.size(), 0);
    constexpr double tan22 = 0.41421356237309503;
    for (int y = 1; y + 1 < h; ++y)
        for (int x = 1; x + 1 < w; ++x) {
            const std::size_t i = idx(x, y);
            const double m = g.mag[i];
            if (m < low) continue;
            const double ax = std::abs(g.gx[i]), ay = std::abs(g.gy[i]);
            int dx, dy;
            if (ay <= ax * tan22) {
                dx = 1; dy = 0;
            } else if (ax <= ay * tan22) {
                dx = 0; dy = 1;
            } else {
                dx = 1;
                dy = ((g.gx[i] > 0) == (g.gy[i] > 0)) ? 1 : -1;
            }
            // Strict on one side only so a plateau of equal maxima keeps one pixel.
            const double before = g.mag[idx(x - dx, y - dy)], after = g.mag[idx(x + dx, y + dy)];
            if (!(m > before && m >= after)) continue;
            cls[i] = m >= high_threshold ? 2 : 1;
        }

    BinaryMask out(w, h);
    std::vector<std::pair<int, int>> stack;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            if (cls[idx(x, y)] == 2 && !out.get(x, y)) {
                out.set(x, y);
                stack.emplace_back(x, y);
                while (!stack.empty()) {
                    const auto [cx, cy] = stack.back();
                    stack.pop_back();
                    for (int yy = cy - 1; yy <= cy + 1; ++yy)
                        for (int xx = cx - 1; xx <= cx + 1; ++xx) {
                            if (xx < 0 || yy < 0 || xx >= w || yy >= h || out.get(xx, yy)) continue;
                            if (cls[idx(xx, yy)] == 0) continue;
                            out.set(xx, yy);
                            stack.emplace_back(xx, yy);
                        }
                }
            }
    return out;
}

/// Foreground where intensity < threshold (the wire is dark).
inline BinaryMask threshold_tool(const RasterFrame& f, int threshold = 130) {
    f.validate();
    if (threshold <= 0 || threshold >= 255) throw InvalidInput("tool threshold must lie in (0, 255)");
    BinaryMask m(f.width, f.height);
    for (std::size_t i = 0; i < f.data.size(); ++i) m.bits[i] = f.data[i] < threshold ? 1 : 0;
    return m;
}

namespace detail {

// Square structuring element of half-size r, as two separable 1-D passes.
// `outside` is the value assumed beyond the image border.
inline BinaryMask morph(const BinaryMask& in, int r, bool dilate, bool outside) {
    const int w = in.width, h = in.height;
    auto pass = [&](const BinaryMask& src, bool horizontal) {
        BinaryMask dst(w, h);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                bool v = !dilate;
                for (int k = -r; k <= r; ++k) {
                    const int xx = horizontal ? x + k : x, yy = horizontal ? y : y + k;
                    const bool inside = xx >= 0 && yy >= 0 && xx < w && yy < h;
                    const bool b = inside ? src.get(xx, yy) : outside;
                    if (dilate ? b : !b) {
                        v = dilate;
                        break;
                    }
                }
                dst.set(x, y, v);
            }
        return dst;
    };
    return pass(pass(in, true), false);
}

}  // namespace detail

inline BinaryMask dilate(const BinaryMask& m, int radius) { return detail::morph(m, radius, true, false); }
/// Pixels beyond the border count as foreground, so erosion never eats in from the edge.
inline BinaryMask erode(const BinaryMask& m, int radius) { return detail::morph(m, radius, false, true); }

/// Dilation followed by erosion with a (2r+1)^2 square; fills gaps up to 2r pixels.
inline BinaryMask morph_close(const BinaryMask& m, int radius = 1) {
    if (radius < 0) throw InvalidInput("morphological radius must be >= 0");
    if (radius == 0) return m;
    return erode(dilate(m, radius), radius);
}

struct VesselMaskParams {
    int blur_kernel = 5;
    double canny_high = 100.0;
    double canny_ratio = 5.0;
    int tool_threshold = 130;
    int tool_clearance_px = 2;  // edges this close to dark tool pixels are dropped
};

/// Wall-boundary mask from one frame; edges produced by the wire itself (if
/// present in that frame) are removed.
inline BinaryMask vessel_mask(const RasterFrame& frame, const VesselMaskParams& p = {}) {
    const RasterFrame blurred = gaussian_blur(frame, p.blur_kernel);
    BinaryMask edges = canny_edges(blurred, p.canny_high, p.canny_ratio);
    if (p.tool_clearance_px > 0) {
        const BinaryMask tool = dilate(threshold_tool(blurred, p.tool_threshold), p.tool_clearance_px + 1);
        for (std::size_t i = 0; i < edges.bits.size(); ++i)
            if (tool.bits[i]) edges.bits[i] = 0;
    }
    return edges;
}

struct ToolMaskParams {
    int blur_kernel = 0;  // > 0 blurs before thresholding
    int threshold = 130;  // midpoint of the rendered wire and background levels
    int close_radius = 1;
};

inline BinaryMask tool_mask(const RasterFrame& frame, const ToolMaskParams& p = {}) {
    const RasterFrame src = p.blur_kernel > 0 ? gaussian_blur(frame, p.blur_kernel) : frame;
    return morph_close(threshold_tool(src, p.threshold), p.close_radius);
}

// --- tracked shape ------------------------------------------------------------

struct CenterlinePoint {
    double x = 0.0, y = 0.0;
    double s = 0.0;  // arc length from base
    Vec2 position() const { return {x, y}; }
};

struct ContactObservation {
    double x = 0.0, y = 0.0;
    double s = 0.0;
    std::optional<Vec2> wall_normal;  // unit, pointing from the wall toward the wire
    Vec2 position() const { return {x, y}; }
};

struct TrackedShape {
    std::vector<CenterlinePoint> centerline;
    std::vector<ContactObservation> contacts;
    CenterlinePoint tip;
    double calibration = 1.0;  // mm per px; 1 while still in pixels
    double timestamp = 0.0;

    double length() const { return tip.s; }

    void validate() const {
        if (centerline.size() < 2) throw InvalidInput("tracked shape: need at least two centerline points");
        for (std::size_t i = 1; i < centerline.size(); ++i)
            if (!(centerline[i].s > centerline[i - 1].s))
                throw InvalidInput("tracked shape: arc length must increase strictly (point " + std::to_string(i) + ")");
        if (tip.s != centerline.back().s) throw InvalidInput("tracked shape: tip must be the last centerline point");
        for (std::size_t i = 0; i < contacts.size(); ++i) {
            if (contacts[i].s > tip.s) throw InvalidInput("tracked shape: contact beyond tip");
            if (i > 0 && contacts[i].s < contacts[i - 1].s) throw InvalidInput("tracked shape: contacts not ordered by s");
        }
        if (!(calibration > 0.0)) throw InvalidInput("tracked shape: calibration must be positive");
    }

    /// Position on the centerline at arc length s (linear between points, clamped).
    Vec2 point_at(double s) const {
        if (s <= centerline.front().s) return centerline.front().position();
        if (s >= centerline.back().s) return centerline.back().position();
        const auto hi = std::upper_bound(centerline.begin(), centerline.end(), s,
                                         [](double v, const CenterlinePoint& p) { return v < p.s; });
        const auto lo = hi - 1;
        const double t = (s - lo->s) / (hi->s - lo->s);
        return lo->position() + (hi->position() - lo->position()) * t;
    }
};

/// Uniform isotropic scaling of coordinates and arc lengths.
inline TrackedShape calibrate(const TrackedShape& in, double mm_per_px) {
    if (!(mm_per_px > 0.0) || !std::isfinite(mm_per_px)) throw InvalidInput("calibration scale must be positive");
    TrackedShape out = in;
    auto sc = [mm_per_px](auto& p) {
        p.x *= mm_per_px;
        p.y *= mm_per_px;
        p.s *= mm_per_px;
    };
    for (auto& p : out.centerline) sc(p);
    for (auto& c : out.contacts) sc(c);
    sc(out.tip);
    out.calibration = in.calibration * mm_per_px;
    return out;
}

/// Writes `s_mm,x_mm,y_mm,is_contact,is_tip`; contact positions are rows of the centerline.
inline void write_tracked_shape(std::ostream& out, const TrackedShape& shape) {
    out << "s_mm,x_mm,y_mm,is_contact,is_tip\n";
    std::size_t c = 0;
    for (std::size_t i = 0; i < shape.centerline.size(); ++i) {
        const CenterlinePoint& p = shape.centerline[i];
        bool contact = false;
        while (c < shape.contacts.size() && shape.contacts[c].s <= p.s + 1e-9) {
            if (std::abs(shape.contacts[c].s - p.s) <= 1e-9) contact = true;
            ++c;
        }
        out << csv::fmt(p.s) << ',' << csv::fmt(p.x) << ',' << csv::fmt(p.y) << ',' << (contact ? 1 : 0) << ','
            << (i + 1 == shape.centerline.size() ? 1 : 0) << '\n';
    }
}

inline TrackedShape read_tracked_shape(std::istream& in) {
    auto [header, rows] = csv::read_table(in);
    const std::vector<std::string> want{"s_mm", "x_mm", "y_mm", "is_contact", "is_tip"};
    if (header != want) throw ParseError("tracked shape header must be s_mm,x_mm,y_mm,is_contact,is_tip", 0);
    TrackedShape shape;
    for (const csv::Row& r : rows) {
        if (r.cells.size() != 5) throw ParseError("expected 5 columns", r.line);
        CenterlinePoint p{csv::parse_double(r.cells[1], r.line, "x_mm"), csv::parse_double(r.cells[2], r.line, "y_mm"),
                          csv::parse_double(r.cells[0], r.line, "s_mm")};
        if (!shape.centerline.empty() && !(p.s > shape.centerline.back().s))
            throw ParseError("s_mm must be strictly increasing", r.line);
        const long contact = csv::parse_int(r.cells[3], r.line, "is_contact");
        const long tip = csv::parse_int(r.cells[4], r.line, "is_tip");
        if (tip && &r != &rows.back()) throw ParseError("tip must be the last row", r.line);
        shape.centerline.push_back(p);
        if (contact) shape.contacts.push_back({p.x, p.y, p.s, std::nullopt});
    }
    if (shape.centerline.size() < 2) throw ParseError("tracked shape needs at least two rows", 0);
    shape.tip = shape.centerline.back();
    return shape;
}

// --- sweep --------------------------------------------------------------------

struct Rect {
    int x = 0, y = 0, width = 0, height = 0;
    bool contains(int px, int py) const { return px >= x && py >= y && px < x + width && py < y + height; }
};

/// Tracking failures: no wire in the seed region, or a sweep that never ends.
class TrackingError : public InvalidInput {
public:
    enum class Kind { seed_not_found, runaway_track };
    TrackingError(Kind k, const std::string& what) : InvalidInput(what), kind_(k) {}
    Kind kind() const noexcept { return kind_; }

private:
    Kind kind_;
};

struct SweepParams {
    Rect seed_region;                // base frame for the initial search
    double wire_width_px = 0.0;      // 0: estimated from the seed region
    double window_length_px = 0.0;   // extent along the normal; 0: 2 x wire width
    double step_px = 0.0;            // advance per step; 0: half the window length
    double contact_distance_px = 0.0;// 0: 1.5 x wire half-width
    int min_pixels = 3;
    double gap_lookahead = 1.5;      // in window lengths
    int max_steps = 100000;
    std::optional<Vec2> forward;     // base-to-tip direction hint at the seed
    int smooth_half_window = 3;      // quadratic Savitzky-Golay half-width (points); 0 disables
};

namespace detail {

struct Window {
    int count = 0;
    double offset = 0.0;  // mean normal offset of the selected run
    double max_along = -std::numeric_limits<double>::infinity();
};

inline Vec2 pixel_center(int x, int y) { return {x + 0.5, y + 0.5}; }

/// Tool pixels in a window centred at c (depth along t, length along n). Only
/// the contiguous run across the wire nearest the window centre counts.
inline Window scan_window(const BinaryMask& tool, Vec2 c, Vec2 t, double depth, double length) {
    const Vec2 n = t.perp();
    const double reach = 0.5 * std::hypot(depth, length) + 1.0;
    const int x0 = static_cast<int>(std::floor(c.x - reach)), x1 = static_cast<int>(std::ceil(c.x + reach));
    const int y0 = static_cast<int>(std::floor(c.y - reach)), y1 = static_cast<int>(std::ceil(c.y + reach));
    std::vector<std::pair<double, double>> hits;  // (normal offset, along offset)
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            if (!tool.get(x, y)) continue;
            const Vec2 d = pixel_center(x, y) - c;
            const double a = dot(d, t), b = dot(d, n);
            if (std::abs(a) <= 0.5 * depth && std::abs(b) <= 0.5 * length) hits.emplace_back(b, a);
        }
    Window w;
    if (hits.empty()) return w;
    std::sort(hits.begin(), hits.end());
    // Split where consecutive normal offsets jump by more than 1.5 px.
    std::size_t best_lo = 0, best_hi = 0;
    double best_score = std::numeric_limits<double>::infinity();
    for (std::size_t lo = 0; lo < hits.size();) {
        std::size_t hi = lo + 1;
        while (hi < hits.size() && hits[hi].first - hits[hi - 1].first <= 1.5) ++hi;
        double mean = 0.0;
        for (std::size_t k = lo; k < hi; ++k) mean += hits[k].first;
        mean /= static_cast<double>(hi - lo);
        if (std::abs(mean) < best_score) {
            best_score = std::abs(mean);
            best_lo = lo;
            best_hi = hi;
        }
        lo = hi;
    }
    double sum = 0.0;
    for (std::size_t k = best_lo; k < best_hi; ++k) {
        sum += hits[k].first;
        w.max_along = std::max(w.max_along, hits[k].second);
    }
    w.count = static_cast<int>(best_hi - best_lo);
    w.offset = sum / w.count;
    return w;
}

struct SweepResult {
    std::vector<Vec2> points;  // accepted centroids, starting after the seed
    Vec2 end;                  // refined extremity
};

inline SweepResult sweep(const BinaryMask& tool, Vec2 start, Vec2 dir, double depth, double length, double step,
                         int min_pixels, double lookahead, int max_steps) {
    SweepResult r;
    std::vector<Vec2> hist{start};
    Vec2 t = dir;
    Vec2 c = start;
    for (int it = 0;; ++it) {
        if (it >= max_steps)
            throw TrackingError(TrackingError::Kind::runaway_track,
                                "sweep exceeded " + std::to_string(max_steps) + " steps without reaching the tip");
        bool found = false;
        const int max_skip = std::max(1, static_cast<int>(std::floor(lookahead * length / step)));
        for (int k = 1; k <= max_skip && !found; ++k) {
            const Vec2 pred = c + t * (step * k);
            const Window w = scan_window(tool, pred, t, depth, length);
            if (w.count >= min_pixels) {
                c = pred + t.perp() * w.offset;
                found = true;
            }
        }
        if (!found) break;
        hist.push_back(c);
        r.points.push_back(c);
        const std::size_t m = hist.size();
        Vec2 tn = m >= 3 ? (hist[m - 1] * 3.0 - hist[m - 2] * 4.0 + hist[m - 3]) : (hist[m - 1] - hist[m - 2]);
        tn = tn.normalized();
        if (dot(tn, t) > 0.0) t = (tn + t * 0.5).normalized();
    }
    // Extremity: farthest tool pixel centre ahead of the last centroid. With a
    // midpoint threshold that centre trails the true end by a quarter pixel on
    // average over wire directions.
    // The last window may straddle the end, leaving its centroid past the
    // extremity; such centroids are dropped.
    const Window ahead = scan_window(tool, c + t * length, t, 2.0 * length, length);
    const Window here = scan_window(tool, c, t, depth, length);
    double reach = here.count > 0 ? here.max_along : 0.0;
    if (ahead.count > 0) reach = std::max(reach, length + ahead.max_along);
    r.end = c + t * (reach + 0.25);
    while (!r.points.empty() && dot(r.end - r.points.back(), t) <= 0.0) r.points.pop_back();
    return r;
}

/// Quadratic Savitzky-Golay smoothing of interior points; the two
/// extremities are kept. Suppresses the centroid zig-zag that would otherwise
/// bias the integrated arc length upward.
inline std::vector<Vec2> smooth_polyline(const std::vector<Vec2>& in, int half) {
    if (half <= 0 || in.size() < 3) return in;
    std::vector<Vec2> out = in;
    const int n = static_cast<int>(in.size());
    for (int i = 1; i + 1 < n; ++i) {
        const int m = std::min({half, i, n - 1 - i});
        if (m < 2) {
            // Too close to an end for a quadratic fit: plain 3-point average.
            out[static_cast<std::size_t>(i)] = (in[static_cast<std::size_t>(i - 1)] + in[static_cast<std::size_t>(i)] * 2.0 +
                                                in[static_cast<std::size_t>(i + 1)]) * 0.25;
            continue;
        }
        // Centre value of a least-squares quadratic on 2m+1 equispaced samples.
        const double M = m;
        const double norm = (2.0 * M + 1.0) * (4.0 * M * M + 4.0 * M - 3.0) / 3.0;
        Vec2 acc;
        for (int k = -m; k <= m; ++k) {
            const double w = (3.0 * M * M + 3.0 * M - 1.0 - 5.0 * k * k) / norm;
            acc += in[static_cast<std::size_t>(i + k)] * w;
        }
        out[static_cast<std::size_t>(i)] = acc;
    }
    return out;
}

inline double nearest_wall(const BinaryMask& walls, Vec2 p, double radius, Vec2* nearest) {
    double best = std::numeric_limits<double>::infinity();
    const int x0 = static_cast<int>(std::floor(p.x - radius)), x1 = static_cast<int>(std::ceil(p.x + radius));
    const int y0 = static_cast<int>(std::floor(p.y - radius)), y1 = static_cast<int>(std::ceil(p.y + radius));
    for (int y = y0; y <= y1; ++y)
        for (int x = x0; x <= x1; ++x) {
            if (!walls.get(x, y)) continue;
            const double d = distance(pixel_center(x, y), p);
            if (d < best) {
                best = d;
                if (nearest) *nearest = pixel_center(x, y);
            }
        }
    return best;
}

}  // namespace detail

/// Estimated wire width (px) from the tool pixels inside a region: pixel area
/// divided by the extent along the principal axis.
inline double estimate_width(const BinaryMask& tool, const Rect& r, Vec2* axis = nullptr, Vec2* centroid = nullptr) {
    std::vector<Vec2> px;
    for (int y = r.y; y < r.y + r.height; ++y)
        for (int x = r.x; x < r.x + r.width; ++x)
            if (tool.get(x, y)) px.push_back(detail::pixel_center(x, y));
    if (px.empty()) throw TrackingError(TrackingError::Kind::seed_not_found, "no tool pixels in the seed region");
    Vec2 c;
    for (Vec2 p : px) c += p;
    c = c / static_cast<double>(px.size());
    double sxx = 0.0, syy = 0.0, sxy = 0.0;
    for (Vec2 p : px) {
        sxx += (p.x - c.x) * (p.x - c.x);
        syy += (p.y - c.y) * (p.y - c.y);
        sxy += (p.x - c.x) * (p.y - c.y);
    }
    const double ang = 0.5 * std::atan2(2.0 * sxy, sxx - syy);
    const Vec2 d{std::cos(ang), std::sin(ang)};
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (Vec2 p : px) {
        lo = std::min(lo, dot(p - c, d));
        hi = std::max(hi, dot(p - c, d));
    }
    if (axis) *axis = d;
    if (centroid) *centroid = c;
    return static_cast<double>(px.size()) / (hi - lo + 1.0);
}

/// Moving-window sweep over the tool mask. Returns a shape in pixel units
/// (calibration 1) whose arc length starts at the proximal extremity.
inline TrackedShape sweep_track(const BinaryMask& tool, const BinaryMask& walls, const SweepParams& p) {
    if (!tool.same_shape(walls)) throw InvalidInput("sweep: tool and wall masks differ in size");
    if (p.min_pixels < 1) throw InvalidInput("sweep: min_pixels must be >= 1");
    Vec2 axis, seed;
    const double est_width = estimate_width(tool, p.seed_region, &axis, &seed);
    const double width = p.wire_width_px > 0.0 ? p.wire_width_px : est_width;
    const double length = p.window_length_px > 0.0 ? p.window_length_px : 2.0 * width;
    const double step = p.step_px > 0.0 ? p.step_px : 0.5 * length;
    const double cd = p.contact_distance_px > 0.0 ? p.contact_distance_px : 1.5 * 0.5 * width;

    // Snap the seed onto the wire's cross-section.
    const detail::Window w0 = detail::scan_window(tool, seed, axis, step, length);
    if (w0.count > 0) seed = seed + axis.perp() * w0.offset;

    auto run = [&](Vec2 dir) {
        return detail::sweep(tool, seed, dir, step, length, step, p.min_pixels, p.gap_lookahead, p.max_steps);
    };
    detail::SweepResult a = run(axis), b = run(-axis);
    bool a_forward;
    if (p.forward) a_forward = dot(*p.forward, axis) >= 0.0;
    else a_forward = a.points.size() >= b.points.size();
    const detail::SweepResult& fwd = a_forward ? a : b;
    const detail::SweepResult& back = a_forward ? b : a;

    std::vector<Vec2> pts{back.end};
    for (auto it = back.points.rbegin(); it != back.points.rend(); ++it) pts.push_back(*it);
    pts.push_back(seed);
    pts.insert(pts.end(), fwd.points.begin(), fwd.points.end());
    pts.push_back(fwd.end);
    pts = detail::smooth_polyline(pts, p.smooth_half_window);

    TrackedShape shape;
    double s = 0.0;
    for (std::size_t i = 0; i < pts.size(); ++i) {
        if (i > 0) {
            const double d = distance(pts[i], pts[i - 1]);
            if (d <= 1e-9) continue;
            s += d;
        }
        shape.centerline.push_back({pts[i].x, pts[i].y, s});
    }
    if (shape.centerline.size() < 2)
        throw TrackingError(TrackingError::Kind::seed_not_found, "tracked wire is shorter than one window");
    shape.tip = shape.centerline.back();

    // Contacts: runs of a 0.25 px resampling of the centerline that lie within
    // the contact distance of a wall pixel.
    const double search = cd + 1.5, ds = 0.25;
    const double total = shape.tip.s;
    const std::size_t nq = static_cast<std::size_t>(std::floor(total / ds)) + 1;
    std::vector<double> dist(nq);
    std::vector<Vec2> wall_at(nq);
    for (std::size_t k = 0; k < nq; ++k)
        dist[k] = detail::nearest_wall(walls, shape.point_at(static_cast<double>(k) * ds), search, &wall_at[k]);
    std::vector<ContactObservation> contacts;
    for (std::size_t i = 0; i < nq;) {
        if (!(dist[i] < cd)) {
            ++i;
            continue;
        }
        std::size_t j = i;
        while (j + 1 < nq && dist[j + 1] < cd) ++j;
        // Depth-weighted centre: robust to the pixel quantization of the wall.
        double wsum = 0.0, ssum = 0.0;
        for (std::size_t k = i; k <= j; ++k) {
            wsum += cd - dist[k];
            ssum += (cd - dist[k]) * static_cast<double>(k) * ds;
        }
        const double best_s = ssum / wsum;
        const std::size_t kc = static_cast<std::size_t>(std::lround(best_s / ds));
        const Vec2 at = shape.point_at(best_s);
        ContactObservation c{at.x, at.y, best_s, std::nullopt};
        const Vec2 nrm = at - wall_at[kc];
        if (nrm.norm() > 0.0) c.wall_normal = nrm.normalized();
        contacts.push_back(c);
        i = j + 1;
    }
    // Contacts become centerline vertices so the CSV can flag them.
    for (const ContactObservation& c : contacts) {
        auto it = std::lower_bound(shape.centerline.begin(), shape.centerline.end(), c.s,
                                   [](const CenterlinePoint& q, double v) { return q.s < v; });
        if (it != shape.centerline.end() && std::abs(it->s - c.s) < 1e-9) continue;
        shape.centerline.insert(it, {c.x, c.y, c.s});
    }
    shape.contacts = std::move(contacts);
    shape.tip = shape.centerline.back();
    return shape;
}

struct PipelineParams {
    ToolMaskParams tool;
    SweepParams sweep;
    double mm_per_px = 1.0;
};

/// One frame: tool mask, sweep against a precomputed wall mask, calibration.
inline TrackedShape track_frame(const RasterFrame& frame, const BinaryMask& walls, const PipelineParams& p) {
    TrackedShape px = sweep_track(tool_mask(frame, p.tool), walls, p.sweep);
    px.timestamp = frame.timestamp;
    TrackedShape mm = calibrate(px, p.mm_per_px);
    mm.timestamp = frame.timestamp;
    return mm;
}

}  // namespace icf::seg
